"""Padded-batch training loop with per-step JSON-lines logging and per-epoch
checkpoints.

Role frames vary in size across a batch, so per-sample head outputs are
zero-padded to the batch maximum and the padded slots are masked out of
every loss term and every denominator. The loop owns the parameters; the
data pipeline and evaluation only ever see snapshots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import losses, tensor as T
from .losses import build_batch_targets, batch_loss
from .model import ModelConfig, ModelParams, forward_grounded, save_checkpoint
from .ontology import FrameSpace, ValidationError
from .optim import AdamW, clip_gradients, global_grad_norm
from .tensor import Rng


@dataclass
class TrainSettings:
    epochs: int = 10
    max_steps: int | None = None        # stop earlier if set
    batch_size: int = 16
    seed: int = 0
    lr: float = 1e-4
    backbone_lr: float = 1e-5
    weight_decay: float = 1e-4
    clip_norm: float = 0.1
    lr_decay_every: int = 0             # epochs; 0 disables the step decay
    lr_decay_factor: float = 0.1


def train(samples, space: FrameSpace, config: ModelConfig,
          settings: TrainSettings, out_dir=None,
          params: ModelParams | None = None):
    """Train on (annotation, feature grid) pairs; teacher-forces the
    ground-truth verb. Returns (params, history). Deterministic in the
    seed: identical runs produce identical logs bitwise.

    When out_dir is set, writes log.jsonl plus a rolling checkpoint.narr
    each epoch and checkpoint_final.narr at the end.
    """
    if not samples:
        raise ValidationError("cannot train on an empty dataset")
    rng = Rng(settings.seed)
    if params is None:
        params = ModelParams.init(config, space, rng)
    opt = AdamW(params, lr=settings.lr, backbone_lr=settings.backbone_lr,
                weight_decay=settings.weight_decay)

    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "log.jsonl", "w", encoding="utf-8")

    history = []
    step = 0
    try:
        for epoch in range(settings.epochs):
            if settings.lr_decay_every and epoch > 0 \
                    and epoch % settings.lr_decay_every == 0:
                opt.scale_lr(settings.lr_decay_factor)
            order = rng.permutation(len(samples))
            for lo in range(0, len(order), settings.batch_size):
                batch = [samples[i] for i in order[lo:lo + settings.batch_size]]
                breakdown = _train_step(batch, space, params, config, opt,
                                        settings, rng)
                step += 1
                line = {"step": step, "epoch": epoch, **breakdown.as_dict(),
                        "grad_norm": breakdown.grad_norm, "lr": opt.lr}
                history.append(line)
                if log_file is not None:
                    log_file.write(json.dumps(line) + "\n")
                if settings.max_steps is not None and step >= settings.max_steps:
                    break
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoint.narr", params, step,
                                rng.state())
            if settings.max_steps is not None and step >= settings.max_steps:
                break
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint_final.narr", params, step,
                            rng.state())
    finally:
        if log_file is not None:
            log_file.close()
    return params, history


def _train_step(batch, space, params, config, opt, settings, rng):
    verb_logits, noun_logits, boxes, exist = [], [], [], []
    for ann, grid in batch:
        v, n, b, e = forward_grounded(grid, ann.verb, space, params, rng,
                                      train=True)
        verb_logits.append(v)
        noun_logits.append(n)
        boxes.append(b)
        exist.append(e)
    targets = build_batch_targets([ann for ann, _ in batch], space)
    total, breakdown = batch_loss(verb_logits, noun_logits, boxes, exist,
                                  targets, config)
    params.zero_grads()
    T.backward(total)
    clip_gradients(params, settings.clip_norm)
    breakdown.grad_norm = global_grad_norm(params)
    opt.step()
    return breakdown
