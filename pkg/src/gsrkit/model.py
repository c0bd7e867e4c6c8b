"""Full model: feature projection, verb-token encoder, role-query decoder,
three prediction heads, and the inference procedure.

The encoder prepends a learnable verb token to projected image features;
its output column drives verb classification. The decoder starts from a
zero stream and is steered entirely by additive semantic role queries
(verb embedding concatenated with role embedding), producing one feature
per role for the noun, box, and box-existence heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import blocks, container, tensor as T
from .blocks import (AttentionParams, DecoderLayerParams, EncoderLayerParams,
                     FfnParams, LnParams, init_attention, init_ffn, init_ln,
                     ln_cols)
from .boxes import cxcywh_to_xyxy, scale_box
from .ontology import FrameSpace, ValidationError
from .retrieval import PredictionRecord, VerbEntry
from .tensor import Rng, Tensor

BOX_EXISTENCE_THRESHOLD = 0.5


@dataclass
class ModelConfig:
    d: int = 512
    d_v: int = 256
    d_r: int = 256
    heads: int = 8
    encoder_layers: int = 6
    decoder_layers: int = 6
    ffn_dim: int | None = None          # defaults to 4*d
    dropout_transformer: float = 0.15
    dropout_verb_head: float = 0.3
    dropout_noun_head: float = 0.3
    dropout_exist_head: float = 0.2
    dropout_box_head: float = 0.2
    pre_ln: bool = True
    grid_channels: int = 64
    grid_h: int = 6
    grid_w: int = 6
    lambda_verb: float = 1.0
    lambda_noun: float = 1.0
    lambda_exist: float = 5.0
    lambda_l1: float = 5.0
    lambda_giou: float = 5.0
    label_smoothing_verb: float = 0.3
    label_smoothing_noun: float = 0.2
    full_pos_table: bool = False        # one full d x hw table instead of halves
    per_layer_pos: bool = False         # dedicated table per layer
    backbone: str = "none"              # "none" | "patch"
    backbone_raw_channels: int = 3
    backbone_patch: int = 2
    precision: str = "float64"

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.d
        self.validate()

    def validate(self):
        if self.d_v + self.d_r != self.d:
            raise ValidationError(
                f"d_v + d_r must equal d: {self.d_v}+{self.d_r} != {self.d}")
        if self.d % self.heads != 0:
            raise ValidationError(
                f"head count {self.heads} does not divide d={self.d}")
        if not self.full_pos_table and self.d % 2 != 0:
            raise ValidationError("split positional table needs even d")
        for name in ("dropout_transformer", "dropout_verb_head",
                     "dropout_noun_head", "dropout_exist_head",
                     "dropout_box_head"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValidationError(f"{name}={rate} outside [0, 1)")
        if self.backbone not in ("none", "patch"):
            raise ValidationError(f"unknown backbone {self.backbone!r}")
        if self.precision not in ("float32", "float64"):
            raise ValidationError(f"unknown precision {self.precision!r}")
        return self

    @property
    def hw(self):
        return self.grid_h * self.grid_w

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


@dataclass
class MlpHead:
    """Fully connected stack; weights[i] maps layer i's input to output."""

    weights: list
    biases: list


class ModelParams:
    """All learnable tensors, registered under stable dotted names.

    `groups` maps "backbone"/"main" to parameter names so the optimizer can
    apply the two-tier learning rate.
    """

    def __init__(self, config: ModelConfig, vocab_sizes: tuple):
        self.config = config
        self.vocab_sizes = vocab_sizes   # (n_verbs, n_roles, n_nouns)
        self._tensors = {}
        self.groups = {"backbone": [], "main": []}

    def _reg(self, name: str, t: Tensor, group="main") -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._tensors[name] = t
        self.groups[group].append(name)
        return t

    def named(self) -> dict:
        return self._tensors

    def tensors(self):
        return self._tensors.values()

    def zero_grads(self):
        for t in self._tensors.values():
            t.zero_grad()

    def count_parameters(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @classmethod
    def init(cls, config: ModelConfig, space: FrameSpace, rng: Rng
             ) -> "ModelParams":
        d, dt = config.d, config.dtype
        n_verbs, n_roles, n_nouns = (len(space.verbs), len(space.roles),
                                     len(space.nouns))
        p = cls(config, (n_verbs, n_roles, n_nouns))

        def mat(name, out_dim, in_dim, group="main"):
            return p._reg(name, Tensor(T.xavier_uniform(rng, out_dim, in_dim, dt),
                                       requires_grad=True), group)

        def zeros(name, shape, group="main"):
            return p._reg(name, Tensor(np.zeros(shape, dt), requires_grad=True),
                          group)

        if config.backbone == "patch":
            s, c_raw = config.backbone_patch, config.backbone_raw_channels
            c = config.grid_channels
            p.bb_proj = mat("backbone.patch.w", c, c_raw * s * s, "backbone")
            p.bb_proj_b = zeros("backbone.patch.b", (c, 1), "backbone")
            p.bb_mix = mat("backbone.mix.w", c, c, "backbone")
            p.bb_mix_b = zeros("backbone.mix.b", (c, 1), "backbone")

        p.input_proj_w = mat("input_proj.w", d, config.grid_channels)
        p.input_proj_b = zeros("input_proj.b", (d, 1))
        p.verb_token = mat("verb_token", d, 1)

        def pos_tables(prefix):
            if config.full_pos_table:
                return (mat(f"{prefix}.full", d, config.hw),)
            return (mat(f"{prefix}.row", d // 2, config.grid_h),
                    mat(f"{prefix}.col", d // 2, config.grid_w))

        if config.per_layer_pos:
            p.pos_enc = [pos_tables(f"pos.enc{i}")
                         for i in range(config.encoder_layers)]
            p.pos_dec = [pos_tables(f"pos.dec{i}")
                         for i in range(config.decoder_layers)]
        else:
            shared = pos_tables("pos")
            p.pos_enc = [shared] * config.encoder_layers
            p.pos_dec = [shared] * config.decoder_layers

        def attn(prefix) -> AttentionParams:
            return AttentionParams(
                wq=mat(f"{prefix}.wq", d, d), wk=mat(f"{prefix}.wk", d, d),
                wv=mat(f"{prefix}.wv", d, d), wo=mat(f"{prefix}.wo", d, d),
                heads=config.heads)

        def lnp(prefix) -> LnParams:
            return LnParams(
                gain=p._reg(f"{prefix}.gain",
                            Tensor(np.ones(d, dt), requires_grad=True)),
                bias=zeros(f"{prefix}.bias", (d,)))

        def ffnp(prefix) -> FfnParams:
            f = config.ffn_dim
            return FfnParams(w1=mat(f"{prefix}.w1", f, d),
                             b1=zeros(f"{prefix}.b1", (f, 1)),
                             w2=mat(f"{prefix}.w2", d, f),
                             b2=zeros(f"{prefix}.b2", (d, 1)))

        p.encoder = []
        for i in range(config.encoder_layers):
            pre = f"enc{i}"
            p.encoder.append(EncoderLayerParams(
                self_attn=attn(f"{pre}.self"), ln_attn=lnp(f"{pre}.ln_attn"),
                ffn=ffnp(f"{pre}.ffn"), ln_ffn=lnp(f"{pre}.ln_ffn")))
        p.decoder = []
        for i in range(config.decoder_layers):
            pre = f"dec{i}"
            p.decoder.append(DecoderLayerParams(
                self_attn=attn(f"{pre}.self"), ln_self=lnp(f"{pre}.ln_self"),
                cross_attn=attn(f"{pre}.cross"), ln_cross=lnp(f"{pre}.ln_cross"),
                ffn=ffnp(f"{pre}.ffn"), ln_ffn=lnp(f"{pre}.ln_ffn")))

        p.ln_verb = lnp("ln_verb")
        p.ln_decoder_out = lnp("ln_decoder_out")

        if config.d_v > 0:
            p.embed_verb = mat("embed.verb", n_verbs, config.d_v)
        else:
            p.embed_verb = None
        p.embed_role = mat("embed.role", n_roles, config.d_r)

        def head(prefix, dims) -> MlpHead:
            ws, bs = [], []
            for i, (o, inp) in enumerate(zip(dims[1:], dims[:-1])):
                ws.append(mat(f"{prefix}.w{i + 1}", o, inp))
                bs.append(zeros(f"{prefix}.b{i + 1}", (o, 1)))
            return MlpHead(weights=ws, biases=bs)

        hidden = 2 * d
        p.head_verb = head("head.verb", (d, hidden, n_verbs))
        p.head_noun = head("head.noun", (d, hidden, n_nouns))
        p.head_exist = head("head.exist", (d, hidden, 1))
        p.head_box = head("head.box", (d, hidden, hidden, 4))
        return p


# ---------------------------------------------------------------------------
# prediction containers


@dataclass(frozen=True)
class GroundedPrediction:
    """Raw per-role outputs conditioned on one verb; boxes are normalized
    cxcywh in [0,1]^4, existence probabilities in [0,1]."""

    verb: str
    roles: tuple
    noun_logits: np.ndarray       # (n_nouns, n_roles)
    boxes_cxcywh: np.ndarray      # (4, n_roles)
    exist_probs: np.ndarray       # (n_roles,)


@dataclass(frozen=True)
class RolePrediction:
    role: str
    noun: str
    box: tuple | None             # absolute-pixel xyxy, gated at 0.5


@dataclass(frozen=True)
class SituationPrediction:
    verb_logits: np.ndarray
    verb: str
    roles: tuple                  # RolePrediction per frame slot


# ---------------------------------------------------------------------------
# forward pieces


def _null_rng():
    return Rng(0)


def featurize(grid: np.ndarray, params: ModelParams) -> Tensor:
    """Project a feature grid (or raw grid through the patch backbone) to a
    d x hw column sequence; column i*w+j is grid cell (i, j)."""
    cfg = params.config
    if cfg.backbone == "patch":
        s, c_raw = cfg.backbone_patch, cfg.backbone_raw_channels
        exp = (c_raw, cfg.grid_h * s, cfg.grid_w * s)
        if grid.shape != exp:
            raise ValidationError(f"raw grid {grid.shape}, expected {exp}")
        # strided patch embedding: each s x s block becomes one column
        c0, hh, ww = grid.shape
        patches = (grid.reshape(c0, cfg.grid_h, s, cfg.grid_w, s)
                   .transpose(1, 3, 0, 2, 4).reshape(cfg.hw, c0 * s * s).T)
        x = Tensor(np.ascontiguousarray(patches, dtype=cfg.dtype))
        x = T.relu(T.add(T.matmul(params.bb_proj, x), params.bb_proj_b))
        x = T.add(T.matmul(params.bb_mix, x), params.bb_mix_b)
    else:
        exp = (cfg.grid_channels, cfg.grid_h, cfg.grid_w)
        if grid.shape != exp:
            raise ValidationError(f"feature grid {grid.shape}, expected {exp}")
        x = Tensor(np.ascontiguousarray(
            grid.reshape(cfg.grid_channels, cfg.hw), dtype=cfg.dtype))
    return T.add(T.matmul(params.input_proj_w, x), params.input_proj_b)


def positional_table(params: ModelParams, tables) -> Tensor:
    """Assemble the d x hw table; split form concatenates the row half of
    cell (i, j) with its column half."""
    cfg = params.config
    if cfg.full_pos_table:
        return tables[0]
    row_t, col_t = tables
    h, w = cfg.grid_h, cfg.grid_w
    row_idx = np.repeat(np.arange(h), w)
    col_idx = np.tile(np.arange(w), h)
    top = row_t[(slice(None), row_idx)]
    bottom = col_t[(slice(None), col_idx)]
    return T.concat([top, bottom], axis=0)


def encode(f_img: Tensor, params: ModelParams, rng: Rng, train: bool,
           trace: list | None = None):
    """Run the encoder; returns (normalized verb feature (d,1), image
    features (d, hw))."""
    cfg = params.config
    d = cfg.d
    dt = cfg.dtype
    seq = T.concat([params.verb_token, f_img], axis=1)
    zero_col = Tensor(np.zeros((d, 1), dt))
    for i, layer in enumerate(params.encoder):
        p = positional_table(params, params.pos_enc[i])
        p_prime = T.concat([zero_col, p], axis=1)
        layer_trace = [] if trace is not None else None
        seq = blocks.encoder_layer(seq, p_prime, layer,
                                   cfg.dropout_transformer, rng, train,
                                   cfg.pre_ln, trace=layer_trace)
        if trace is not None:
            trace.append(layer_trace)
    e_v = ln_cols(seq[(slice(None), slice(0, 1))], params.ln_verb)
    e_img = seq[(slice(None), slice(1, None))]
    return e_v, e_img


def _mlp(x: Tensor, head: MlpHead, rate: float, rng: Rng, train: bool) -> Tensor:
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        x = T.add(T.matmul(w, x), b)
        if i < len(head.weights) - 1:
            x = T.dropout(T.relu(x), rate, rng, train)
    return x


def classify_verb(e_v: Tensor, params: ModelParams, rng: Rng,
                  train: bool) -> Tensor:
    """Verb logits (n_verbs,) from the encoder's verb feature."""
    cfg = params.config
    out = _mlp(e_v, params.head_verb, cfg.dropout_verb_head, rng, train)
    return T.reshape(out, (params.vocab_sizes[0],))


def top_k_verbs(verb_logits: np.ndarray, k: int) -> list:
    """Indices of the k largest logits, descending; ties go to the lower
    index (stable sort oracle)."""
    if k > verb_logits.shape[0]:
        raise ValueError(f"k={k} exceeds verb count {verb_logits.shape[0]}")
    return list(np.argsort(-verb_logits, kind="stable")[:k])


def build_role_queries(verb: str, space: FrameSpace,
                       params: ModelParams) -> Tensor:
    """d x |frame| query columns: verb embedding over role embedding, in
    frame order."""
    cfg = params.config
    frame = space.frame(verb)
    role_idx = np.array([space.role_index[r] for r in frame])
    role_part = T.transpose(params.embed_role[(role_idx, slice(None))])
    if cfg.d_v == 0:
        return role_part
    v_idx = space.verb_index[verb]
    verb_col = T.reshape(params.embed_verb[(v_idx, slice(None))], (cfg.d_v, 1))
    verb_part = T.mul(verb_col, np.ones((1, len(frame)), cfg.dtype))
    return T.concat([verb_part, role_part], axis=0)


def decode(s_v: Tensor, e_img: Tensor, params: ModelParams, rng: Rng,
           train: bool, trace_self: list | None = None,
           trace_cross: list | None = None) -> Tensor:
    """Run the decoder from a zero stream; returns normalized per-role
    features (d, |frame|)."""
    cfg = params.config
    x = Tensor(np.zeros((cfg.d, s_v.shape[1]), cfg.dtype))
    for i, layer in enumerate(params.decoder):
        p = positional_table(params, params.pos_dec[i])
        lt_self = [] if trace_self is not None else None
        lt_cross = [] if trace_cross is not None else None
        x = blocks.decoder_layer(x, s_v, e_img, p, layer,
                                 cfg.dropout_transformer, rng, train,
                                 cfg.pre_ln, trace_self=lt_self,
                                 trace_cross=lt_cross)
        if trace_self is not None:
            trace_self.append(lt_self)
        if trace_cross is not None:
            trace_cross.append(lt_cross)
    return ln_cols(x, params.ln_decoder_out)


def predict_heads(role_features: Tensor, params: ModelParams, rng: Rng,
                  train: bool):
    """Per-role outputs: noun logits (n_nouns, R), sigmoid boxes (4, R),
    existence probabilities (1, R)."""
    cfg = params.config
    nouns = _mlp(role_features, params.head_noun, cfg.dropout_noun_head,
                 rng, train)
    boxes = T.sigmoid(_mlp(role_features, params.head_box,
                           cfg.dropout_box_head, rng, train))
    exist = T.sigmoid(_mlp(role_features, params.head_exist,
                           cfg.dropout_exist_head, rng, train))
    return nouns, boxes, exist


def forward_grounded(grid: np.ndarray, verb: str, space: FrameSpace,
                     params: ModelParams, rng: Rng, train: bool):
    """Teacher-forced forward pass: verb logits plus per-role head outputs
    conditioned on `verb`. Returns tensors (graph-connected)."""
    f_img = featurize(grid, params)
    e_v, e_img = encode(f_img, params, rng, train)
    verb_logits = classify_verb(e_v, params, rng, train)
    s_v = build_role_queries(verb, space, params)
    feats = decode(s_v, e_img, params, rng, train)
    nouns, boxes, exist = predict_heads(feats, params, rng, train)
    return verb_logits, nouns, boxes, exist


# ---------------------------------------------------------------------------
# inference


def _grounded_from_tensors(verb, frame, nouns, boxes, exist):
    return GroundedPrediction(
        verb=verb, roles=tuple(frame), noun_logits=nouns.data.copy(),
        boxes_cxcywh=boxes.data.copy(),
        exist_probs=exist.data.reshape(-1).copy())


def decode_for_verb(verb: str, e_img: Tensor, space: FrameSpace,
                    params: ModelParams) -> GroundedPrediction:
    rng = _null_rng()
    s_v = build_role_queries(verb, space, params)
    feats = decode(s_v, e_img, params, rng, train=False)
    nouns, boxes, exist = predict_heads(feats, params, rng, train=False)
    return _grounded_from_tensors(verb, space.frame(verb), nouns, boxes, exist)


def gate_boxes(pred: GroundedPrediction, width: int, height: int):
    """Existence gate at 0.5 (boundary counts as present); surviving boxes
    become absolute-pixel xyxy."""
    out = []
    for k in range(len(pred.roles)):
        if pred.exist_probs[k] >= BOX_EXISTENCE_THRESHOLD:
            xyxy = cxcywh_to_xyxy(tuple(pred.boxes_cxcywh[:, k]))
            out.append(scale_box(xyxy, width, height))
        else:
            out.append(None)
    return out


def noun_names(pred: GroundedPrediction, space: FrameSpace):
    idx = np.argmax(pred.noun_logits, axis=0)
    return [space.nouns[i] for i in idx]


def infer(grid: np.ndarray, space: FrameSpace, params: ModelParams,
          width: int, height: int) -> SituationPrediction:
    """Argmax verb, then grounded nouns conditioned on it."""
    with T.no_grad():
        f_img = featurize(grid, params)
        e_v, e_img = encode(f_img, params, _null_rng(), train=False)
        verb_logits = classify_verb(e_v, params, _null_rng(), train=False).data
        verb = space.verbs[int(np.argmax(verb_logits))]
        pred = decode_for_verb(verb, e_img, space, params)
    nouns = noun_names(pred, space)
    gated = gate_boxes(pred, width, height)
    roles = tuple(RolePrediction(role=r, noun=n, box=b)
                  for r, n, b in zip(pred.roles, nouns, gated))
    return SituationPrediction(verb_logits=verb_logits.copy(), verb=verb,
                               roles=roles)


def predict_record(image_id: str, grid: np.ndarray, space: FrameSpace,
                   params: ModelParams, width: int, height: int, k: int = 5,
                   gt_verb: str | None = None) -> PredictionRecord:
    """Top-k verb entries (each fully re-decoded under its verb) plus an
    optional entry conditioned on the ground-truth verb."""
    with T.no_grad():
        f_img = featurize(grid, params)
        e_v, e_img = encode(f_img, params, _null_rng(), train=False)
        verb_logits = classify_verb(e_v, params, _null_rng(), train=False).data

        def entry_for(verb):
            pred = decode_for_verb(verb, e_img, space, params)
            return VerbEntry(verb=verb,
                             nouns=tuple(noun_names(pred, space)),
                             boxes=tuple(gate_boxes(pred, width, height)))

        entries = tuple(entry_for(space.verbs[i])
                        for i in top_k_verbs(verb_logits, k))
        gt_entry = entry_for(gt_verb) if gt_verb is not None else None
    return PredictionRecord(image_id=image_id, entries=entries,
                            gt_entry=gt_entry)


def infer_topk(grid: np.ndarray, space: FrameSpace, params: ModelParams,
               width: int, height: int, k: int = 5) -> PredictionRecord:
    return predict_record("", grid, space, params, width, height, k=k)


# ---------------------------------------------------------------------------
# attention extraction


@dataclass(frozen=True)
class AttentionMap:
    stage: str            # "encoder" | "decoder_self" | "decoder_cross"
    layer: int
    head: int
    query_labels: tuple
    key_labels: tuple
    matrix: np.ndarray    # rows sum to 1


@dataclass
class AttentionTrace:
    maps: list
    grid_h: int
    grid_w: int


def extract_attention(grid: np.ndarray, verb: str, space: FrameSpace,
                      params: ModelParams) -> AttentionTrace:
    """Per-layer, per-head attention rows with dropout off.

    Encoder maps are the verb-token query's attention over the hw image
    cells, renormalized after dropping the token's own slot so each
    exported row still sums to 1. Decoder self maps are role-over-role;
    decoder cross maps are role-over-image-cell.
    """
    cfg = params.config
    frame = space.frame(verb)
    cells = tuple(f"cell_{i}_{j}" for i in range(cfg.grid_h)
                  for j in range(cfg.grid_w))
    maps = []
    with T.no_grad():
        f_img = featurize(grid, params)
        enc_trace = []
        _, e_img = encode(f_img, params, _null_rng(), train=False,
                          trace=enc_trace)
        for layer, heads in enumerate(enc_trace):
            for head, w in enumerate(heads):
                row = w[0, 1:]
                row = row / row.sum()
                maps.append(AttentionMap(
                    stage="encoder", layer=layer, head=head,
                    query_labels=("verb_token",), key_labels=cells,
                    matrix=row.reshape(1, -1)))
        s_v = build_role_queries(verb, space, params)
        tr_self, tr_cross = [], []
        decode(s_v, e_img, params, _null_rng(), train=False,
               trace_self=tr_self, trace_cross=tr_cross)
        for layer, heads in enumerate(tr_self):
            for head, w in enumerate(heads):
                maps.append(AttentionMap(
                    stage="decoder_self", layer=layer, head=head,
                    query_labels=tuple(frame), key_labels=tuple(frame),
                    matrix=w))
        for layer, heads in enumerate(tr_cross):
            for head, w in enumerate(heads):
                maps.append(AttentionMap(
                    stage="decoder_cross", layer=layer, head=head,
                    query_labels=tuple(frame), key_labels=cells, matrix=w))
    return AttentionTrace(maps=maps, grid_h=cfg.grid_h, grid_w=cfg.grid_w)


def save_attention(trace: AttentionTrace, out_dir):
    """One CSV per (stage, layer, head) plus an index.json with labels."""
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"grid_h": trace.grid_h, "grid_w": trace.grid_w, "maps": []}
    for m in trace.maps:
        name = f"{m.stage}_l{m.layer}_h{m.head}.csv"
        lines = [",".join(repr(float(v)) for v in row) for row in m.matrix]
        (out_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        index["maps"].append({
            "file": name, "stage": m.stage, "layer": m.layer, "head": m.head,
            "query_labels": list(m.query_labels),
            "key_labels": list(m.key_labels)})
    (out_dir / "index.json").write_text(
        json.dumps(index, ensure_ascii=False, indent=1) + "\n",
        encoding="utf-8")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, step: int,
                    rng_state: dict | None = None, extra: dict | None = None):
    meta = {"config": params.config.to_dict(), "step": step,
            "vocab_sizes": list(params.vocab_sizes),
            "format": "gsrkit-checkpoint-v1"}
    if rng_state is not None:
        meta["rng"] = {
            "algorithm": rng_state["algorithm"], "seed": rng_state["seed"],
            "position": rng_state["position"],
            "pcg64_state": str(rng_state["bg_state"]["state"]["state"]),
            "pcg64_inc": str(rng_state["bg_state"]["state"]["inc"]),
            "has_uint32": rng_state["bg_state"]["has_uint32"],
            "uinteger": rng_state["bg_state"]["uinteger"]}
    if extra:
        meta.update(extra)
    container.save_arrays(path, {n: t.data for n, t in params.named().items()},
                          meta)


def load_checkpoint(path, space: FrameSpace):
    """Rebuild params from a checkpoint; shapes and names must match the
    stored config and the given frame space."""
    arrays, meta = container.load_arrays(path)
    config = ModelConfig.from_dict(meta["config"])
    params = ModelParams.init(config, space, Rng(0))
    if tuple(meta["vocab_sizes"]) != tuple(params.vocab_sizes):
        raise ValidationError(
            f"{path}: checkpoint vocab sizes {meta['vocab_sizes']} do not "
            f"match the frame space {list(params.vocab_sizes)}")
    stored = set(arrays)
    expected = set(params.named())
    if stored != expected:
        missing = sorted(expected - stored)[:3]
        extra = sorted(stored - expected)[:3]
        raise ValidationError(
            f"{path}: parameter names mismatch (missing {missing}, "
            f"unexpected {extra})")
    for name, t in params.named().items():
        if arrays[name].shape != t.shape:
            raise ValidationError(
                f"{path}: {name} has shape {arrays[name].shape}, "
                f"expected {t.shape}")
        t.data = arrays[name].astype(config.dtype)
    return params, config, meta


def restore_rng(meta: dict) -> Rng:
    rng = Rng(meta["rng"]["seed"])
    rng.set_state({
        "seed": meta["rng"]["seed"], "position": meta["rng"]["position"],
        "bg_state": {"bit_generator": "PCG64",
                     "state": {"state": int(meta["rng"]["pcg64_state"]),
                               "inc": int(meta["rng"]["pcg64_inc"])},
                     "has_uint32": meta["rng"]["has_uint32"],
                     "uinteger": meta["rng"]["uinteger"]}})
    return rng
