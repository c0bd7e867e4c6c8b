"""Attention, encoder-layer, and decoder-layer math.

Sequences are column-major: a d x n array holds n feature vectors of width
d. Positional encodings and role queries are additive on keys and queries
only; values always see the raw sequence. Layer normalization runs over
the feature axis (axis 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class AttentionParams:
    """Stacked per-head projections: rows m*dh..(m+1)*dh of wq/wk/wv are
    head m's query/key/value projection (each dh x d); wo is d x d."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @property
    def d(self):
        return self.wq.shape[1]

    @property
    def head_dim(self):
        return self.d // self.heads


@dataclass
class FfnParams:
    w1: Tensor   # (ffn_dim, d)
    b1: Tensor   # (ffn_dim, 1)
    w2: Tensor   # (d, ffn_dim)
    b2: Tensor   # (d, 1)


@dataclass
class LnParams:
    gain: Tensor  # (d,)
    bias: Tensor  # (d,)


@dataclass
class EncoderLayerParams:
    self_attn: AttentionParams
    ln_attn: LnParams
    ffn: FfnParams
    ln_ffn: LnParams


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    ln_self: LnParams
    cross_attn: AttentionParams
    ln_cross: LnParams
    ffn: FfnParams
    ln_ffn: LnParams


def init_attention(d: int, heads: int, rng, dtype) -> AttentionParams:
    if d % heads != 0:
        raise ValueError(f"head count {heads} does not divide width {d}")
    mk = lambda: Tensor(T.xavier_uniform(rng, d, d, dtype), requires_grad=True)
    return AttentionParams(wq=mk(), wk=mk(), wv=mk(), wo=mk(), heads=heads)


def init_ffn(d: int, ffn_dim: int, rng, dtype) -> FfnParams:
    return FfnParams(
        w1=Tensor(T.xavier_uniform(rng, ffn_dim, d, dtype), requires_grad=True),
        b1=Tensor(np.zeros((ffn_dim, 1), dtype), requires_grad=True),
        w2=Tensor(T.xavier_uniform(rng, d, ffn_dim, dtype), requires_grad=True),
        b2=Tensor(np.zeros((d, 1), dtype), requires_grad=True))


def init_ln(d: int, dtype) -> LnParams:
    return LnParams(gain=Tensor(np.ones(d, dtype), requires_grad=True),
                    bias=Tensor(np.zeros(d, dtype), requires_grad=True))


def ln_cols(x: Tensor, ln: LnParams) -> Tensor:
    return T.layer_norm(x, ln.gain, ln.bias, axis=0)


def attention(q: Tensor, k: Tensor, v: Tensor):
    """Scaled dot-product attention over column sequences.

    q is dh x n_q; k, v are dh x n_kv. Returns (dh x n_q output, weights);
    weights rows (one per query) are softmax-normalized over keys.
    """
    dh = q.shape[0]
    if k.shape[0] != dh or v.shape[0] != dh or k.shape[1] != v.shape[1]:
        raise ValueError(
            f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    scores = T.scale(T.matmul(T.transpose(q), k), 1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)            # (n_q, n_kv)
    out = T.matmul(v, T.transpose(weights))         # (dh, n_q)
    return out, weights


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: AttentionParams,
                         q_additive: Tensor | None = None,
                         k_additive: Tensor | None = None,
                         trace: list | None = None) -> Tensor:
    """Concatenated heads projected by wo.

    Additives (positional encodings or role queries) are added to the query
    and key inputs before projection; values use the raw x_kv. When `trace`
    is a list, each head's weight matrix is appended as an ndarray.
    """
    d, heads, dh = params.d, params.heads, params.head_dim
    if x_q.shape[0] != d or x_kv.shape[0] != d:
        raise ValueError(f"expected width {d}, got {x_q.shape} / {x_kv.shape}")
    if q_additive is not None and q_additive.shape != x_q.shape:
        raise ValueError(
            f"query additive {q_additive.shape} != query {x_q.shape}")
    if k_additive is not None and k_additive.shape != x_kv.shape:
        raise ValueError(
            f"key additive {k_additive.shape} != keys {x_kv.shape}")
    q_in = T.add(x_q, q_additive) if q_additive is not None else x_q
    k_in = T.add(x_kv, k_additive) if k_additive is not None else x_kv

    q_all = T.matmul(params.wq, q_in)
    k_all = T.matmul(params.wk, k_in)
    v_all = T.matmul(params.wv, x_kv)
    outs = []
    for m in range(heads):
        rows = (slice(m * dh, (m + 1) * dh), slice(None))
        out, w = attention(q_all[rows], k_all[rows], v_all[rows])
        outs.append(out)
        if trace is not None:
            trace.append(w.data.copy())
    return T.matmul(params.wo, T.concat(outs, axis=0))


def ffn(x: Tensor, params: FfnParams, dropout_rate: float, rng, train: bool):
    hidden = T.relu(T.add(T.matmul(params.w1, x), params.b1))
    hidden = T.dropout(hidden, dropout_rate, rng, train)
    return T.add(T.matmul(params.w2, hidden), params.b2)


def residual_block(x: Tensor, block, ln: LnParams, dropout_rate: float,
                   rng, train: bool, pre_ln: bool = True) -> Tensor:
    """Skip connection around `block`.

    Pre-LN (default): x + Dropout(block(LayerNorm(x))).
    Post-LN (ablation): LayerNorm(x + Dropout(block(x))).
    """
    if pre_ln:
        return T.add(x, T.dropout(block(ln_cols(x, ln)), dropout_rate, rng, train))
    return ln_cols(T.add(x, T.dropout(block(x), dropout_rate, rng, train)), ln)


def encoder_layer(f: Tensor, p_prime: Tensor, params: EncoderLayerParams,
                  dropout_rate: float, rng, train: bool, pre_ln: bool = True,
                  trace: list | None = None) -> Tensor:
    """One encoder layer over the verb token plus image columns.

    p_prime must carry a zero column 0 (the verb-token slot has no
    positional encoding).
    """
    if f.shape != p_prime.shape:
        raise ValueError(f"features {f.shape} vs encodings {p_prime.shape}")
    if np.any(p_prime.data[:, 0] != 0):
        raise ValueError("positional encoding column 0 (verb token) must be zero")
    f = residual_block(
        f, lambda u: multi_head_attention(u, u, params.self_attn,
                                          q_additive=p_prime,
                                          k_additive=p_prime, trace=trace),
        params.ln_attn, dropout_rate, rng, train, pre_ln)
    return residual_block(
        f, lambda u: ffn(u, params.ffn, dropout_rate, rng, train),
        params.ln_ffn, dropout_rate, rng, train, pre_ln)


def decoder_layer(x: Tensor, s_v: Tensor, e_img: Tensor, p: Tensor,
                  params: DecoderLayerParams, dropout_rate: float, rng,
                  train: bool, pre_ln: bool = True,
                  trace_self: list | None = None,
                  trace_cross: list | None = None) -> Tensor:
    """One decoder layer: role self-attention, cross-attention to image
    features (keys get positional encodings, queries get role queries), FFN."""
    if x.shape != s_v.shape:
        raise ValueError(f"decoder stream {x.shape} vs role queries {s_v.shape}")
    if e_img.shape != p.shape:
        raise ValueError(f"image features {e_img.shape} vs encodings {p.shape}")
    x = residual_block(
        x, lambda u: multi_head_attention(u, u, params.self_attn,
                                          q_additive=s_v, k_additive=s_v,
                                          trace=trace_self),
        params.ln_self, dropout_rate, rng, train, pre_ln)
    x = residual_block(
        x, lambda u: multi_head_attention(u, e_img, params.cross_attn,
                                          q_additive=s_v, k_additive=p,
                                          trace=trace_cross),
        params.ln_cross, dropout_rate, rng, train, pre_ln)
    return residual_block(
        x, lambda u: ffn(u, params.ffn, dropout_rate, rng, train),
        params.ln_ffn, dropout_rate, rng, train, pre_ln)
