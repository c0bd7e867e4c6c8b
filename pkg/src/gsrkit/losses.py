"""Training losses: verb/noun cross-entropies with label smoothing, box
existence, L1 and generalized-IoU box regression, and the weighted total.

Two faces of the same math live here. The per-sample functions compute one
annotation's losses directly and serve as the unbatched reference. The
batched path stacks zero-padded per-sample head outputs and masks padded
role slots out of every sum and every denominator; its agreement with the
per-sample mean is a tested invariant, not an assumption.

L1 runs on normalized center/size boxes, the generalized-IoU term on
normalized corner boxes, both averaged over the grounded roles only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import cxcywh_to_xyxy, xyxy_to_cxcywh
from .ontology import FrameSpace, SituationAnnotation
from .tensor import Tensor

N_ANNOTATORS = 3


@dataclass
class LossBreakdown:
    verb: float
    noun: float
    exist: float
    l1: float
    giou: float
    total: float
    n_roles: int = 0
    n_grounded: int = 0
    grad_norm: float = 0.0

    def as_dict(self) -> dict:
        return {"verb": self.verb, "noun": self.noun, "exist": self.exist,
                "l1": self.l1, "giou": self.giou, "total": self.total}


def smooth_one_hot(index: int, n_classes: int, eps: float,
                   dtype=np.float64) -> np.ndarray:
    """(1-eps) on the gold class plus eps spread uniformly over all classes."""
    t = np.full(n_classes, eps / n_classes, dtype=dtype)
    t[index] += 1.0 - eps
    return t


# ---------------------------------------------------------------------------
# per-sample losses (unbatched reference)


def verb_loss(verb_logits: Tensor, gt_index: int, smoothing: float) -> Tensor:
    n = verb_logits.shape[0]
    if not 0 <= gt_index < n:
        raise ValueError(f"verb index {gt_index} outside vocabulary of {n}")
    return T.cross_entropy(verb_logits,
                           smooth_one_hot(gt_index, n, smoothing,
                                          verb_logits.dtype))


def noun_loss(noun_logits: Tensor, annotation: SituationAnnotation,
              space: FrameSpace, smoothing: float) -> Tensor:
    """Role-averaged cross-entropy per annotator label set, summed over the
    three sets."""
    n_nouns, n_roles = noun_logits.shape
    if n_roles != len(annotation.role_entries):
        raise ValueError(
            f"{n_roles} logit columns for {len(annotation.role_entries)} roles")
    ls = T.log_softmax(noun_logits, axis=0)
    total = None
    for a in range(N_ANNOTATORS):
        targets = np.stack(
            [smooth_one_hot(space.noun_index[e.nouns[a]], n_nouns, smoothing,
                            noun_logits.dtype)
             for e in annotation.role_entries], axis=1)
        per_role = T.neg(T.tsum(T.mul(ls, targets), axis=0))
        term = T.tmean(per_role)
        total = term if total is None else T.add(total, term)
    return total


def existence_loss(exist_probs: Tensor, annotation: SituationAnnotation
                   ) -> Tensor:
    """Mean binary cross-entropy of box existence over the frame's roles."""
    p = T.reshape(exist_probs, (-1,))
    t = np.array([1.0 if e.box is not None else 0.0
                  for e in annotation.role_entries], dtype=p.dtype)
    if p.shape[0] != t.shape[0]:
        raise ValueError(f"{p.shape[0]} probabilities for {t.shape[0]} roles")
    pc = T.clip(p, 1e-7, 1.0 - 1e-7)
    ll = T.add(T.mul(T.tlog(pc), t), T.mul(T.tlog(T.sub(1.0, pc)), 1.0 - t))
    return T.neg(T.tmean(ll))


def normalized_gt_boxes(annotation: SituationAnnotation):
    """Ground-truth boxes scaled by image size; returns (mask, cxcywh (4,G),
    xyxy (4,G)) over the grounded roles, frame order preserved."""
    mask = np.array([e.box is not None for e in annotation.role_entries])
    xyxy = []
    cxcywh = []
    for e in annotation.role_entries:
        if e.box is None:
            continue
        x1, y1, x2, y2 = e.box
        norm = (x1 / annotation.width, y1 / annotation.height,
                x2 / annotation.width, y2 / annotation.height)
        xyxy.append(norm)
        cxcywh.append(xyxy_to_cxcywh(norm))
    to_arr = lambda rows: (np.array(rows, dtype=np.float64).T
                           if rows else np.zeros((4, 0)))
    return mask, to_arr(cxcywh), to_arr(xyxy)


def _giou_tensor(px1, py1, px2, py2, gx1, gy1, gx2, gy2):
    """Differentiable 1 - GIoU over matching box component tensors/arrays."""
    inter_w = T.relu(T.sub(T.minimum(px2, gx2), T.maximum(px1, gx1)))
    inter_h = T.relu(T.sub(T.minimum(py2, gy2), T.maximum(py1, gy1)))
    inter = T.mul(inter_w, inter_h)
    area_p = T.mul(T.sub(px2, px1), T.sub(py2, py1))
    area_g = T.mul(T.sub(gx2, gx1), T.sub(gy2, gy1))
    union = T.sub(T.add(area_p, area_g), inter)
    enclose = T.mul(T.sub(T.maximum(px2, gx2), T.minimum(px1, gx1)),
                    T.sub(T.maximum(py2, gy2), T.minimum(py1, gy1)))
    giou = T.sub(T.div(inter, union), T.div(T.sub(enclose, union), enclose))
    return T.sub(1.0, giou)


def _split_cxcywh(boxes: Tensor):
    cx = boxes[(slice(0, 1), slice(None))]
    cy = boxes[(slice(1, 2), slice(None))]
    w = boxes[(slice(2, 3), slice(None))]
    h = boxes[(slice(3, 4), slice(None))]
    half_w, half_h = T.scale(w, 0.5), T.scale(h, 0.5)
    return (T.sub(cx, half_w), T.sub(cy, half_h),
            T.add(cx, half_w), T.add(cy, half_h))


def box_regression_losses(pred_cxcywh: Tensor,
                          annotation: SituationAnnotation):
    """(L1, 1-GIoU) averaged over grounded roles; both zero with no gradient
    when the frame has no ground-truth boxes."""
    mask, gt_cxcywh, gt_xyxy = normalized_gt_boxes(annotation)
    n_grounded = int(mask.sum())
    if n_grounded == 0:
        zero = Tensor(np.zeros((), pred_cxcywh.dtype))
        return zero, zero
    idx = np.where(mask)[0]
    pred = pred_cxcywh[(slice(None), idx)]
    l1 = T.scale(T.tsum(T.tabs(T.sub(pred, gt_cxcywh.astype(pred.dtype)))),
                 1.0 / n_grounded)
    px1, py1, px2, py2 = _split_cxcywh(pred)
    g = gt_xyxy.astype(pred.dtype)
    giou = T.tmean(_giou_tensor(px1, py1, px2, py2,
                                g[0:1], g[1:2], g[2:3], g[3:4]))
    return l1, giou


def total_loss(verb_l: Tensor, noun_l: Tensor, exist_l: Tensor, l1_l: Tensor,
               giou_l: Tensor, config) -> Tensor:
    return T.add(
        T.add(T.scale(verb_l, config.lambda_verb),
              T.scale(noun_l, config.lambda_noun)),
        T.add(T.scale(exist_l, config.lambda_exist),
              T.add(T.scale(l1_l, config.lambda_l1),
                    T.scale(giou_l, config.lambda_giou))))


def sample_loss(verb_logits, noun_logits, boxes, exist, annotation, space,
                config):
    """All five per-sample components and their weighted total."""
    v = verb_loss(verb_logits, space.verb_index[annotation.verb],
                  config.label_smoothing_verb)
    n = noun_loss(noun_logits, annotation, space, config.label_smoothing_noun)
    e = existence_loss(exist, annotation)
    l1, giou = box_regression_losses(boxes, annotation)
    tot = total_loss(v, n, e, l1, giou, config)
    mask, _, _ = normalized_gt_boxes(annotation)
    breakdown = LossBreakdown(
        verb=v.item(), noun=n.item(), exist=e.item(), l1=l1.item(),
        giou=giou.item(), total=tot.item(),
        n_roles=len(annotation.role_entries), n_grounded=int(mask.sum()))
    return tot, breakdown


# ---------------------------------------------------------------------------
# padded batch path


@dataclass
class BatchTargets:
    """Dense padded target arrays; mask marks real role slots."""

    r_max: int
    verb_idx: np.ndarray        # (B,)
    mask: np.ndarray            # (B, R) float 0/1
    noun_idx: np.ndarray        # (B, 3, R) padded with 0
    exist_t: np.ndarray         # (B, R)
    box_mask: np.ndarray        # (B, R) float 0/1
    gt_cxcywh: np.ndarray       # (B, 4, R); dummy values on unmasked slots
    gt_xyxy: np.ndarray         # (B, 4, R); dummy (0,0,1,1) guards division
    n_roles: np.ndarray         # (B,)
    n_grounded: np.ndarray      # (B,)


def build_batch_targets(annotations, space: FrameSpace) -> BatchTargets:
    b = len(annotations)
    r_max = max(len(a.role_entries) for a in annotations)
    verb_idx = np.array([space.verb_index[a.verb] for a in annotations])
    mask = np.zeros((b, r_max))
    noun_idx = np.zeros((b, N_ANNOTATORS, r_max), dtype=np.int64)
    exist_t = np.zeros((b, r_max))
    box_mask = np.zeros((b, r_max))
    gt_cxcywh = np.zeros((b, 4, r_max))
    gt_xyxy = np.tile(np.array([0.0, 0.0, 1.0, 1.0])[None, :, None],
                      (b, 1, r_max))
    for i, ann in enumerate(annotations):
        for k, e in enumerate(ann.role_entries):
            mask[i, k] = 1.0
            for a in range(N_ANNOTATORS):
                noun_idx[i, a, k] = space.noun_index[e.nouns[a]]
            if e.box is not None:
                exist_t[i, k] = 1.0
                box_mask[i, k] = 1.0
                x1, y1, x2, y2 = e.box
                norm = (x1 / ann.width, y1 / ann.height,
                        x2 / ann.width, y2 / ann.height)
                gt_xyxy[i, :, k] = norm
                gt_cxcywh[i, :, k] = xyxy_to_cxcywh(norm)
    return BatchTargets(
        r_max=r_max, verb_idx=verb_idx, mask=mask, noun_idx=noun_idx,
        exist_t=exist_t, box_mask=box_mask, gt_cxcywh=gt_cxcywh,
        gt_xyxy=gt_xyxy, n_roles=mask.sum(axis=1).astype(np.int64),
        n_grounded=box_mask.sum(axis=1).astype(np.int64))


def _pad_columns(t: Tensor, r_max: int) -> Tensor:
    rows, cols = t.shape
    if cols == r_max:
        return t
    pad = Tensor(np.zeros((rows, r_max - cols), t.dtype))
    return T.concat([t, pad], axis=1)


def _masked_per_sample_mean(values: Tensor, mask, denom) -> Tensor:
    """Sum `values * mask` over role slots, divide per sample by `denom`
    (0-denominator samples contribute exactly 0), then mean over samples."""
    per_sample = T.tsum(T.mul(values, mask.astype(values.dtype)), axis=1)
    safe = np.where(denom > 0, denom, 1).astype(values.dtype)
    return T.tmean(T.mul(per_sample, 1.0 / safe))


def batch_loss(verb_logits_list, noun_logits_list, box_list, exist_list,
               targets: BatchTargets, config):
    """Loss of a zero-padded batch; every component equals the mean of the
    per-sample components."""
    b = len(verb_logits_list)
    r_max = targets.r_max
    dtype = verb_logits_list[0].dtype
    n_verbs = verb_logits_list[0].shape[0]
    n_nouns = noun_logits_list[0].shape[0]

    verb_stack = T.stack(verb_logits_list, axis=0)                 # (B, V)
    noun_stack = T.stack([_pad_columns(t, r_max)
                          for t in noun_logits_list], axis=0)      # (B, K, R)
    box_stack = T.stack([_pad_columns(t, r_max) for t in box_list], axis=0)
    exist_stack = T.stack([T.reshape(_pad_columns(t, r_max), (r_max,))
                           for t in exist_list], axis=0)           # (B, R)

    # verb: smoothed cross-entropy, mean over the batch
    eps_v = config.label_smoothing_verb
    tv = np.full((b, n_verbs), eps_v / n_verbs, dtype=dtype)
    tv[np.arange(b), targets.verb_idx] += 1.0 - eps_v
    ls_v = T.log_softmax(verb_stack, axis=1)
    verb_l = T.tmean(T.neg(T.tsum(T.mul(ls_v, tv), axis=1)))

    # nouns: per annotator, role-average within each sample, summed over
    # annotators; padded slots masked out of sums and denominators
    eps_n = config.label_smoothing_noun
    ls_n = T.log_softmax(noun_stack, axis=1)
    noun_l = None
    for a in range(N_ANNOTATORS):
        tn = np.full((b, n_nouns, r_max), eps_n / n_nouns, dtype=dtype)
        bi, ri = np.meshgrid(np.arange(b), np.arange(r_max), indexing="ij")
        tn[bi, targets.noun_idx[:, a, :], ri] += 1.0 - eps_n
        ce = T.neg(T.tsum(T.mul(ls_n, tn), axis=1))                # (B, R)
        term = _masked_per_sample_mean(ce, targets.mask, targets.n_roles)
        noun_l = term if noun_l is None else T.add(noun_l, term)

    # existence: masked mean binary cross-entropy
    pc = T.clip(exist_stack, 1e-7, 1.0 - 1e-7)
    t = targets.exist_t.astype(dtype)
    bce = T.neg(T.add(T.mul(T.tlog(pc), t),
                      T.mul(T.tlog(T.sub(1.0, pc)), 1.0 - t)))
    exist_l = _masked_per_sample_mean(bce, targets.mask, targets.n_roles)

    # boxes: grounded slots only
    l1_all = T.tsum(T.tabs(T.sub(box_stack, targets.gt_cxcywh.astype(dtype))),
                    axis=1)                                        # (B, R)
    l1_l = _masked_per_sample_mean(l1_all, targets.box_mask, targets.n_grounded)

    def comp(i):
        return box_stack[(slice(None), slice(i, i + 1), slice(None))]

    cx, cy, w, h = comp(0), comp(1), comp(2), comp(3)
    half_w, half_h = T.scale(w, 0.5), T.scale(h, 0.5)
    px1, py1 = T.sub(cx, half_w), T.sub(cy, half_h)
    px2, py2 = T.add(cx, half_w), T.add(cy, half_h)
    g = targets.gt_xyxy.astype(dtype)
    giou_all = _giou_tensor(px1, py1, px2, py2,
                            g[:, 0:1, :], g[:, 1:2, :],
                            g[:, 2:3, :], g[:, 3:4, :])
    giou_all = T.reshape(giou_all, (b, r_max))
    giou_l = _masked_per_sample_mean(giou_all, targets.box_mask,
                                     targets.n_grounded)

    tot = total_loss(verb_l, noun_l, exist_l, l1_l, giou_l, config)
    breakdown = LossBreakdown(
        verb=verb_l.item(), noun=noun_l.item(), exist=exist_l.item(),
        l1=l1_l.item(), giou=giou_l.item(), total=tot.item(),
        n_roles=int(targets.n_roles.sum()),
        n_grounded=int(targets.n_grounded.sum()))
    return tot, breakdown
