"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed and row-major. Every forward op checks its output
for NaN/Inf and raises immediately instead of letting a training run go
quietly bad. Gradients accumulate into ``.grad`` across ``backward()``
calls until explicitly zeroed.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

_FLOAT_KINDS = ("f",)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by '{op}'")


class Tensor:
    """n-dimensional real array, optionally part of a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype.kind not in _FLOAT_KINDS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; scalars and ndarrays lift to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def _lift(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, op, parents, backward_fn):
    """Wrap an op result; attach the graph edge only when gradients can flow."""
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g):
    # grads are never mutated in place downstream, so views are safe to store
    if t.requires_grad:
        g = np.asarray(g, dtype=t.data.dtype)
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    out_data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(out_data, "sub", (a, b), bw)


def neg(a) -> Tensor:
    a = _lift(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), bw)


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, "div", (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, "scale", (a,), bw)


def matmul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, "matmul", (a, b), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), "reshape", (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), "transpose", (a,), bw)


def concat(tensors, axis=0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out_data, "concat", ts, bw)


def stack(tensors, axis=0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    out_data = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=axis))

    return _make(out_data, "stack", ts, bw)


def take(a, idx) -> Tensor:
    """Basic and integer-array indexing; gradient scatters back (duplicates add)."""
    a = _lift(a)
    out_data = a.data[idx]

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _make(out_data, "take", (a,), bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape) / count)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape) / count)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,), bw)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, "relu", (a,), bw)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, "sigmoid", (a,), bw)


def texp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _make(out_data, "exp", (a,), bw)


def tlog(a) -> Tensor:
    a = _lift(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _make(out_data, "log", (a,), bw)


def tabs(a) -> Tensor:
    a = _lift(a)
    sign = np.sign(a.data)

    def bw(g):
        _accum(a, g * sign)

    return _make(np.abs(a.data), "abs", (a,), bw)


def maximum(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    pick_a = a.data >= b.data  # subgradient: ties go to the first operand

    def bw(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.maximum(a.data, b.data), "maximum", (a, b), bw)


def minimum(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    pick_a = a.data <= b.data

    def bw(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.minimum(a.data, b.data), "minimum", (a, b), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through unclamped entries."""
    a = _lift(a)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), "clip", (a,), bw)


# ---------------------------------------------------------------------------
# normalization and classification primitives


def softmax(a, axis=-1) -> Tensor:
    """Row-stochastic along `axis`; computed with max subtraction."""
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - inner))

    return _make(out_data, "softmax", (a,), bw)


def log_softmax(a, axis=-1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bw(g):
        _accum(a, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, "log_softmax", (a,), bw)


def layer_norm(a, gain, bias, eps=1e-5, axis=-1) -> Tensor:
    """Per-vector standardization along `axis`, then affine gain/bias.

    `gain` and `bias` are 1-d with the extent of `axis`.
    """
    a = _lift(a)
    gain = _lift(gain, like=a)
    bias = _lift(bias, like=a)
    d = a.shape[axis]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    bshape = [1] * a.ndim
    bshape[axis] = d
    gb = gain.data.reshape(bshape)
    bb = bias.data.reshape(bshape)

    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gb * xhat + bb

    def bw(g):
        gx = g * gb
        m1 = gx.mean(axis=axis, keepdims=True)
        m2 = (gx * xhat).mean(axis=axis, keepdims=True)
        _accum(a, inv * (gx - m1 - xhat * m2))
        reduce_axes = tuple(i for i in range(a.ndim) if i != axis % a.ndim)
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))

    return _make(out_data, "layer_norm", (a, gain, bias), bw)


def cross_entropy(logits, target) -> Tensor:
    """-sum(target * log softmax(logits)) via log-sum-exp.

    `target` is a plain probability vector over the same classes.
    """
    logits = _lift(logits)
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"target shape {t.shape} != logits shape {logits.shape}")
    if abs(float(t.sum()) - 1.0) > 1e-9:
        raise ValueError(f"target is not normalized (sum={float(t.sum())!r})")
    ls = log_softmax(logits, axis=-1)
    return neg(tsum(mul(ls, t)))


def binary_cross_entropy(p, t: float) -> Tensor:
    """-t*log(p) - (1-t)*log(1-p) on a probability already in (0,1).

    `p` is clamped to [1e-7, 1-1e-7] so a saturated sigmoid cannot produce
    an infinite loss.
    """
    p = _lift(p)
    t = float(t)
    pc = clip(p, 1e-7, 1.0 - 1e-7)
    return neg(add(scale(tlog(pc), t), scale(tlog(sub(1.0, pc)), 1.0 - t)))


def dropout(a, rate: float, rng, train: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at eval."""
    a = _lift(a)
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    keep = 1.0 - rate
    mask = (rng.uniform(size=a.shape) < keep).astype(a.dtype) / keep

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, "dropout", (a,), bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor):
    """Reverse-mode accumulation from a scalar loss into every reachable grad."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.shape}")
    topo = _toposort(loss)
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _toposort(root: Tensor):
    """Iterative DFS postorder over the graph (deep graphs, no recursion)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    worst: tuple = ()  # (tensor index, flat element index)


def grad_check(f, inputs, h=1e-5, tol=1e-4, floor=1e-6) -> GradCheckReport:
    """Compare analytic gradients of scalar f(*inputs) with central differences.

    Relative error uses a small absolute floor so that elements whose true
    gradient is ~0 are judged on absolute error instead of blowing up.
    """
    inputs = list(inputs)
    for x in inputs:
        x.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy()
                for x in inputs]

    max_err = 0.0
    worst = ()
    with no_grad():
        for ti, x in enumerate(inputs):
            flat = x.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*inputs).item()
                flat[i] = orig - h
                fm = f(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                ana = analytic[ti].reshape(-1)[i]
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                if err > max_err:
                    max_err = err
                    worst = (ti, i)
    return GradCheckReport(max_rel_err=max_err, tol=tol, passed=max_err < tol,
                           worst=worst)


# ---------------------------------------------------------------------------
# deterministic randomness


class Rng:
    """Seeded PCG64 stream; identical seed and call sequence give identical
    draws on every platform. `position` counts draw calls for checkpoints."""

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        self.position += 1
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.position += 1
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self.position += 1
        return self._gen.integers(low, high, size)

    def permutation(self, n: int):
        self.position += 1
        return self._gen.permutation(n)

    def state(self) -> dict:
        return {"algorithm": self.algorithm, "seed": self.seed,
                "position": self.position, "bg_state": self._gen.bit_generator.state}

    def set_state(self, state: dict):
        self.seed = state["seed"]
        self.position = state["position"]
        self._gen.bit_generator.state = state["bg_state"]


def xavier_uniform(rng: Rng, fan_out: int, fan_in: int, dtype=np.float64):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
