"""Grounded situation similarity and ranked retrieval.

A prediction record holds an image's top-k verb predictions, each with
per-role nouns and existence-gated boxes. The similarity between two
records is the best rank-discounted agreement over any shared verb: a
matched noun contributes 1 plus the IoU of the two boxes, normalized by
frame size and both verbs' ranks. Scores live in [0, 1] and the measure
is symmetric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .boxes import iou
from .ontology import FrameSpace, ValidationError


@dataclass(frozen=True)
class VerbEntry:
    """Prediction conditioned on one verb: per-role nouns and gated boxes
    in frame order; a box is None when its existence probability fell
    below the 0.5 gate."""

    verb: str
    nouns: tuple
    boxes: tuple

    def validate(self, space: FrameSpace):
        frame = space.frame(self.verb)
        if len(self.nouns) != len(frame) or len(self.boxes) != len(frame):
            raise ValidationError(
                f"verb {self.verb!r}: expected {len(frame)} role slots, got "
                f"{len(self.nouns)} nouns / {len(self.boxes)} boxes")
        for n in self.nouns:
            if n not in space.noun_index:
                raise ValidationError(f"unknown noun {n!r}")


@dataclass(frozen=True)
class PredictionRecord:
    """Retrieval unit: top-k verb entries ordered by rank, plus an optional
    prediction conditioned on the ground-truth verb (used by evaluation)."""

    image_id: str
    entries: tuple                 # VerbEntry, rank order
    gt_entry: VerbEntry | None = None

    def validate(self, space: FrameSpace):
        verbs = [e.verb for e in self.entries]
        if len(set(verbs)) != len(verbs):
            raise ValidationError(
                f"{self.image_id}: top verbs must be distinct, got {verbs}")
        for e in self.entries:
            e.validate(space)
        if self.gt_entry is not None:
            self.gt_entry.validate(space)
        return self


def grsitsim(a: PredictionRecord, b: PredictionRecord,
             space: FrameSpace) -> float:
    """Best shared-verb agreement over the two records' ranked entries.

    For entries at ranks i and j (1-based) predicting the same verb with
    frame R: score = (1 / (2 i j |R|)) * sum_k [noun_k matches]
    * (1 + IoU(box_k_a, box_k_b)). A gated-away box contributes IoU 0.
    """
    best = 0.0
    for i, ea in enumerate(a.entries, start=1):
        for j, eb in enumerate(b.entries, start=1):
            if ea.verb != eb.verb:
                continue
            n_roles = len(space.frame(ea.verb))
            acc = 0.0
            for k in range(n_roles):
                if ea.nouns[k] != eb.nouns[k]:
                    continue
                ba, bb = ea.boxes[k], eb.boxes[k]
                overlap = iou(ba, bb) if ba is not None and bb is not None else 0.0
                acc += 1.0 + overlap
            best = max(best, acc / (2.0 * i * j * n_roles))
    return best


@dataclass
class RetrievalIndex:
    """Inverted verb map for pruning: records sharing no verb with the
    probe score exactly 0 and are skipped; results match exhaustive scan."""

    records: tuple
    by_verb: dict      # verb -> list of record positions
    by_id: dict        # image_id -> record position


def build_index(records) -> RetrievalIndex:
    records = tuple(records)
    by_verb = {}
    by_id = {}
    for pos, rec in enumerate(records):
        if rec.image_id in by_id:
            raise ValidationError(f"duplicate image_id {rec.image_id!r}")
        by_id[rec.image_id] = pos
        for e in rec.entries:
            by_verb.setdefault(e.verb, []).append(pos)
    return RetrievalIndex(records=records, by_verb=by_verb, by_id=by_id)


def query(index: RetrievalIndex, probe: PredictionRecord, k: int,
          space: FrameSpace) -> list:
    """Top-k (image_id, score) by descending score; ties broken by id;
    zero-score records omitted."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    candidates = set()
    for e in probe.entries:
        candidates.update(index.by_verb.get(e.verb, ()))
    scored = []
    for pos in candidates:
        rec = index.records[pos]
        s = grsitsim(probe, rec, space)
        if s > 0.0:
            scored.append((rec.image_id, s))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# predictions.jsonl


def _box_to_json(b):
    return None if b is None else [float(v) for v in b]


def _box_from_json(raw, where):
    if raw is None:
        return None
    if not (isinstance(raw, list) and len(raw) == 4):
        raise ValidationError(f"{where}: malformed box {raw!r}")
    return tuple(float(v) for v in raw)


def _entry_to_json(e: VerbEntry):
    return {"verb": e.verb, "nouns": list(e.nouns),
            "boxes": [_box_to_json(b) for b in e.boxes]}


def _entry_from_json(doc, where) -> VerbEntry:
    return VerbEntry(verb=doc["verb"], nouns=tuple(doc["nouns"]),
                     boxes=tuple(_box_from_json(b, where)
                                 for b in doc["boxes"]))


def write_predictions(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            doc = {"image_id": rec.image_id,
                   "top": [_entry_to_json(e) for e in rec.entries],
                   "ground_truth_conditioned":
                       None if rec.gt_entry is None
                       else _entry_to_json(rec.gt_entry)}
            f.write(json.dumps(doc, ensure_ascii=False) + "\n")


def read_predictions(path, space: FrameSpace | None = None) -> list:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                doc = json.loads(line)
                gt = doc.get("ground_truth_conditioned")
                rec = PredictionRecord(
                    image_id=doc["image_id"],
                    entries=tuple(_entry_from_json(e, where)
                                  for e in doc["top"]),
                    gt_entry=None if gt is None else _entry_from_json(gt, where))
            except (KeyError, TypeError) as e:
                raise ValidationError(f"{where}: bad record ({e!r})") from None
            if space is not None:
                try:
                    rec.validate(space)
                except ValidationError as e:
                    raise ValidationError(f"{where}: {e}") from None
            out.append(rec)
    return out
