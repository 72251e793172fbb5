"""Box utilities and bipartite matching of query slots to ground-truth nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment


def box_cxcywh_to_xyxy(b):
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def box_area(b):
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def generalized_box_iou(a, b):
    """Pairwise GIoU between (n, 4) and (m, 4) xyxy boxes."""
    area_a, area_b = box_area(a), box_area(b)
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    iou = inter / union
    lt_c = torch.minimum(a[:, None, :2], b[None, :, :2])
    rb_c = torch.maximum(a[:, None, 2:], b[None, :, 2:])
    wh_c = (rb_c - lt_c).clamp(min=0)
    hull = wh_c[..., 0] * wh_c[..., 1]
    return iou - (hull - union) / hull


@dataclass(frozen=True)
class MatchWeights:
    cost_class: float = 1.0
    cost_bbox: float = 5.0
    cost_giou: float = 2.0


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # ((query slot, gt node), ...) sorted by gt node
    n_queries: int

    @property
    def queries(self):
        return [q for q, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]

    @property
    def unmatched(self):
        used = set(self.queries)
        return [q for q in range(self.n_queries) if q not in used]


def assign(cost):
    """Minimum-cost injection of columns (gt nodes) into rows (query slots)."""
    cost = np.asarray(cost, dtype=np.float64)
    N, M = cost.shape
    if M > N:
        raise ValueError(
            f"{M} ground-truth nodes but only {N} query slots; increase N in the configuration"
        )
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1]))
    return MatchResult(pairs, N)


def match_cost(class_probs, boxes, gt_cats, gt_boxes, weights=MatchWeights()):
    """(N, M) matching cost: negative class probability + L1 box distance - GIoU."""
    class_probs = torch.as_tensor(class_probs)
    boxes = torch.as_tensor(boxes, dtype=class_probs.dtype)
    gt_cats = torch.as_tensor(gt_cats, dtype=torch.long)
    gt_boxes = torch.as_tensor(gt_boxes, dtype=class_probs.dtype).reshape(-1, 4)
    if len(gt_cats) == 0:
        return torch.zeros((class_probs.shape[0], 0), dtype=class_probs.dtype)
    c_class = -class_probs[:, gt_cats]
    c_bbox = torch.cdist(boxes, gt_boxes, p=1)
    c_giou = -generalized_box_iou(boxes, gt_boxes)
    return weights.cost_bbox * c_bbox + weights.cost_class * c_class + weights.cost_giou * c_giou


@torch.no_grad()
def hungarian_match(class_probs, boxes, gt_cats, gt_boxes, weights=MatchWeights()):
    cost = match_cost(class_probs, boxes, gt_cats, gt_boxes, weights)
    return assign(cost.detach().cpu().numpy())
