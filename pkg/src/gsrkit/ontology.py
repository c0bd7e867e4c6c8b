"""Verb/role/noun ontology and dataset handling.

A frame space declares the verb, role, and noun vocabularies plus the
ordered role frame of every verb. Datasets are JSON-lines files of
per-image situation annotations validated against a frame space. Noun
index 0 is reserved for the "unknown" noun, written as "∅".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container

UNKNOWN_NOUN = "∅"

DEFAULT_MAX_ROLES = 6


class ValidationError(ValueError):
    """Bad ontology, dataset, or prediction input; message carries location."""


@dataclass(frozen=True)
class FrameSpace:
    """Verb/role/noun vocabularies and the per-verb ordered role frames."""

    verbs: tuple
    roles: tuple
    nouns: tuple
    frames: dict  # verb name -> tuple of role names, declaration order
    max_roles: int = DEFAULT_MAX_ROLES

    verb_index: dict = field(default_factory=dict, compare=False, repr=False)
    role_index: dict = field(default_factory=dict, compare=False, repr=False)
    noun_index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "verb_index",
                           {v: i for i, v in enumerate(self.verbs)})
        object.__setattr__(self, "role_index",
                           {r: i for i, r in enumerate(self.roles)})
        object.__setattr__(self, "noun_index",
                           {n: i for i, n in enumerate(self.nouns)})

    def frame(self, verb: str) -> tuple:
        try:
            return self.frames[verb]
        except KeyError:
            raise ValidationError(f"unknown verb {verb!r}") from None

    def validate(self):
        for name, seq in (("verb", self.verbs), ("role", self.roles),
                          ("noun", self.nouns)):
            if len(set(seq)) != len(seq):
                dupes = sorted({x for x in seq if list(seq).count(x) > 1})
                raise ValidationError(f"duplicate {name} names: {dupes}")
        if not self.nouns or self.nouns[0] != UNKNOWN_NOUN:
            raise ValidationError(
                f"noun index 0 must be the unknown noun {UNKNOWN_NOUN!r}")
        if set(self.frames) != set(self.verbs):
            raise ValidationError("frames must cover exactly the declared verbs")
        for verb, roles in self.frames.items():
            if not 1 <= len(roles) <= self.max_roles:
                raise ValidationError(
                    f"frame of {verb!r} has {len(roles)} roles, "
                    f"allowed range is [1, {self.max_roles}]")
            if len(set(roles)) != len(roles):
                raise ValidationError(f"frame of {verb!r} repeats a role")
            for r in roles:
                if r not in self.role_index:
                    raise ValidationError(
                        f"frame of {verb!r} references undeclared role {r!r}")
        return self


@dataclass(frozen=True)
class RoleEntry:
    role: str
    nouns: tuple          # exactly 3 annotator labels, duplicates allowed
    box: tuple | None     # absolute-pixel (x1, y1, x2, y2), None if not grounded


@dataclass(frozen=True)
class SituationAnnotation:
    """Ground truth for one image: verb, per-role nouns and optional box."""

    image_id: str
    width: int
    height: int
    verb: str
    role_entries: tuple   # RoleEntry, ordered exactly like the verb's frame
    features: str | None = None   # optional path to a feature container

    def entry(self, role: str) -> RoleEntry:
        for e in self.role_entries:
            if e.role == role:
                return e
        raise KeyError(role)

    def validate(self, space: FrameSpace):
        frame = space.frame(self.verb)
        got = tuple(e.role for e in self.role_entries)
        if got != frame:
            raise ValidationError(
                f"{self.image_id}: role entries {got} do not match the frame "
                f"{frame} of verb {self.verb!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"{self.image_id}: non-positive image size")
        for e in self.role_entries:
            if len(e.nouns) != 3:
                raise ValidationError(
                    f"{self.image_id}/{e.role}: expected 3 noun labels, "
                    f"got {len(e.nouns)}")
            for n in e.nouns:
                if n not in space.noun_index:
                    raise ValidationError(
                        f"{self.image_id}/{e.role}: unknown noun {n!r}")
            if e.box is not None:
                x1, y1, x2, y2 = e.box
                if not (x1 < x2 and y1 < y2):
                    raise ValidationError(
                        f"{self.image_id}/{e.role}: degenerate box {e.box}")
                if x1 < 0 or y1 < 0 or x2 > self.width or y2 > self.height:
                    raise ValidationError(
                        f"{self.image_id}/{e.role}: box {e.box} outside "
                        f"[0,{self.width}]x[0,{self.height}]")
        return self


# ---------------------------------------------------------------------------
# space.json


def load_frame_space(path, max_roles: int = DEFAULT_MAX_ROLES) -> FrameSpace:
    """Load and validate a space.json file.

    Schema: {"verbs": {name: {"roles": [role, ...]}},
             "roles": [name, ...], "nouns": [name, ...]}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from None
    for key in ("verbs", "roles", "nouns"):
        if key not in doc:
            raise ValidationError(f"{path}: missing top-level key {key!r}")
    if not isinstance(doc["verbs"], dict):
        raise ValidationError(f"{path}: 'verbs' must be an object")
    frames = {}
    for verb, spec in doc["verbs"].items():
        if not isinstance(spec, dict) or "roles" not in spec:
            raise ValidationError(f"{path}: verb {verb!r} needs a 'roles' list")
        frames[verb] = tuple(spec["roles"])
    try:
        return FrameSpace(verbs=tuple(doc["verbs"].keys()),
                          roles=tuple(doc["roles"]),
                          nouns=tuple(doc["nouns"]),
                          frames=frames, max_roles=max_roles).validate()
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def save_frame_space(space: FrameSpace, path):
    doc = {"verbs": {v: {"roles": list(space.frames[v])} for v in space.verbs},
           "roles": list(space.roles), "nouns": list(space.nouns)}
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# dataset.jsonl


def _decode_box(raw, where):
    if raw is None:
        return None
    if not (isinstance(raw, list) and len(raw) == 4
            and all(isinstance(v, (int, float)) for v in raw)):
        raise ValidationError(f"{where}: malformed box {raw!r}")
    if all(v == -1 for v in raw):
        # legacy convention for "not grounded": four -1 coordinates
        return None
    return tuple(float(v) for v in raw)


def load_dataset(path, space: FrameSpace) -> list:
    """Read dataset.jsonl; every annotation is validated against `space`."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{where}: not valid JSON ({e})") from None
            try:
                entries = tuple(
                    RoleEntry(role=fr["role"], nouns=tuple(fr["nouns"]),
                              box=_decode_box(fr.get("bbox"),
                                              f"{where}/{fr.get('role')}"))
                    for fr in rec["frames"])
                ann = SituationAnnotation(
                    image_id=rec["image_id"], width=rec["width"],
                    height=rec["height"], verb=rec["verb"],
                    role_entries=entries, features=rec.get("features"))
            except (KeyError, TypeError) as e:
                raise ValidationError(f"{where}: bad record ({e!r})") from None
            try:
                ann.validate(space)
            except ValidationError as e:
                raise ValidationError(f"{where}: {e}") from None
            out.append(ann)
    return out


def save_dataset(annotations, path):
    """Write dataset.jsonl with a stable field order (round-trips load_dataset)."""
    with open(path, "w", encoding="utf-8") as f:
        for ann in annotations:
            rec = {
                "image_id": ann.image_id,
                "width": ann.width,
                "height": ann.height,
                "verb": ann.verb,
                "frames": [
                    {"role": e.role, "nouns": list(e.nouns),
                     "bbox": list(e.box) if e.box is not None else None}
                    for e in ann.role_entries
                ],
            }
            if ann.features is not None:
                rec["features"] = ann.features
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


class FeatureStore:
    """Resolves an annotation's feature grid from its container file.

    Container paths in dataset records are relative to the dataset file's
    directory; array names inside a container are image ids.
    """

    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self._cache = {}

    def grid(self, ann: SituationAnnotation) -> np.ndarray:
        if ann.features is None:
            raise ValidationError(
                f"{ann.image_id}: record has no feature container path")
        path = self.base_dir / ann.features
        if path not in self._cache:
            arrays, _ = container.load_arrays(path)
            self._cache[path] = arrays
        try:
            return self._cache[path][ann.image_id]
        except KeyError:
            raise ValidationError(
                f"{path}: no feature array for image {ann.image_id!r}") from None
