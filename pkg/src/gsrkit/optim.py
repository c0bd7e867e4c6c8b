"""AdamW with decoupled weight decay, two-tier learning rates, and global
gradient-norm clipping."""

from __future__ import annotations

import numpy as np

from .model import ModelParams


def global_grad_norm(params: ModelParams) -> float:
    total = 0.0
    for t in params.tensors():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(params: ModelParams, max_norm: float = 0.1) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.
    Returns the scale factor applied (1.0 when already within bound)."""
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for t in params.tensors():
        if t.grad is not None:
            t.grad = t.grad * scale
    return scale


class AdamW:
    """Decoupled weight decay; bias-corrected moments; the "backbone"
    parameter group runs at its own (lower) learning rate."""

    def __init__(self, params: ModelParams, lr: float = 1e-4,
                 backbone_lr: float = 1e-5, weight_decay: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.backbone_lr = backbone_lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.named().items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.named().items()}
        self._group_of = {}
        for group, names in params.groups.items():
            for n in names:
                self._group_of[n] = group

    def lr_for(self, name: str) -> float:
        return self.backbone_lr if self._group_of[name] == "backbone" else self.lr

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.named().items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            lr = self.lr_for(name)
            t.data = (t.data - lr * self.weight_decay * t.data
                      - lr * m_hat / (np.sqrt(v_hat) + self.eps))

    def scale_lr(self, factor: float):
        self.lr *= factor
        self.backbone_lr *= factor
