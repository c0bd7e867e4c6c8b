"""Box coordinate transforms and overlap measures (plain floats).

Boxes are 4-tuples. XYXY boxes may be absolute pixels or normalized;
CXCYWH boxes are normalized center/size. The differentiable versions used
in training live in the loss module; these are the reference geometry.
"""

from __future__ import annotations


def cxcywh_to_xyxy(b):
    cx, cy, w, h = b
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def xyxy_to_cxcywh(b):
    x1, y1, x2, y2 = b
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def box_area(b):
    x1, y1, x2, y2 = b
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def iou(a, b) -> float:
    """Intersection over union of two XYXY boxes; 0 for a zero-area union."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0.0, ix) * max(0.0, iy)
    union = box_area(a) + box_area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou_loss_term(a, b) -> float:
    """1 - (IoU - enclosing-box slack); in [0, 2], 0 iff the boxes coincide."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0.0, ix) * max(0.0, iy)
    union = box_area(a) + box_area(b) - inter
    enclose = ((max(a[2], b[2]) - min(a[0], b[0]))
               * (max(a[3], b[3]) - min(a[1], b[1])))
    iou_val = inter / union if union > 0.0 else 0.0
    slack = (enclose - union) / enclose if enclose > 0.0 else 0.0
    return 1.0 - (iou_val - slack)


def scale_box(b, sx: float, sy: float):
    x1, y1, x2, y2 = b
    return (x1 * sx, y1 * sy, x2 * sx, y2 * sy)
