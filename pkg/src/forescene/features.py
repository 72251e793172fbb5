"""Node and edge input features for the graph encoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

# pair geometry layout: union box (4), area_i, area_j, union area, IoU, dcx, dcy, log w ratio, log h ratio
GEOMETRY_DIM = 12
IOU_INDEX = 7


@dataclass
class FeatureConfig:
    d_vis: int = 64
    d_box_proj: int = 32
    d_sem: int = 32
    d_node: int = 128
    d_edge: int = 256
    d_union: int = 16

    @property
    def d_vis_proj(self):
        return self.d_node - self.d_box_proj

    @property
    def d_pair(self):
        return (self.d_edge - self.d_union - 2 * self.d_sem) // 2

    def check(self):
        for name in ("d_vis", "d_box_proj", "d_sem", "d_node", "d_edge", "d_union"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_vis_proj < 1:
            raise ValueError("d_node must exceed d_box_proj")
        rest = self.d_edge - self.d_union - 2 * self.d_sem
        if rest < 2 or rest % 2:
            raise ValueError("d_edge - d_union - 2*d_sem must be a positive even number")


def pair_geometry(box_i, box_j):
    """Geometric descriptor of a box pair; boxes are (..., 4) normalized xyxy."""
    x1 = torch.minimum(box_i[..., 0], box_j[..., 0])
    y1 = torch.minimum(box_i[..., 1], box_j[..., 1])
    x2 = torch.maximum(box_i[..., 2], box_j[..., 2])
    y2 = torch.maximum(box_i[..., 3], box_j[..., 3])
    wi = box_i[..., 2] - box_i[..., 0]
    hi = box_i[..., 3] - box_i[..., 1]
    wj = box_j[..., 2] - box_j[..., 0]
    hj = box_j[..., 3] - box_j[..., 1]
    area_i, area_j = wi * hi, wj * hj
    iw = (torch.minimum(box_i[..., 2], box_j[..., 2]) - torch.maximum(box_i[..., 0], box_j[..., 0])).clamp(min=0)
    ih = (torch.minimum(box_i[..., 3], box_j[..., 3]) - torch.maximum(box_i[..., 1], box_j[..., 1])).clamp(min=0)
    inter = iw * ih
    iou = inter / (area_i + area_j - inter)
    dcx = (box_j[..., 0] + box_j[..., 2] - box_i[..., 0] - box_i[..., 2]) / 2
    dcy = (box_j[..., 1] + box_j[..., 3] - box_i[..., 1] - box_i[..., 3]) / 2
    return torch.stack(
        [x1, y1, x2, y2, area_i, area_j, (x2 - x1) * (y2 - y1), iou, dcx, dcy,
         torch.log(wi / wj), torch.log(hi / hj)],
        dim=-1,
    )


class Featurizer(nn.Module):
    def __init__(self, cfg, n_classes):
        super().__init__()
        cfg.check()
        self.cfg = cfg
        self.W1 = nn.Linear(cfg.d_vis, cfg.d_vis_proj, bias=False)
        self.W2 = nn.Linear(4, cfg.d_box_proj, bias=False)
        self.W3 = nn.Linear(cfg.d_node, cfg.d_pair, bias=False)
        self.W4 = nn.Linear(cfg.d_node, cfg.d_pair, bias=False)
        self.W5 = nn.Linear(cfg.d_union, cfg.d_union, bias=False)
        self.union_lift = nn.Linear(GEOMETRY_DIM, cfg.d_union, bias=False)
        self.sem = nn.Embedding(n_classes, cfg.d_sem)

    def node_features(self, vis, box):
        if vis.shape[-1] != self.cfg.d_vis:
            raise ValueError(f"visual feature has dimension {vis.shape[-1]}, expected {self.cfg.d_vis}")
        return torch.cat([self.W1(vis), self.W2(box)], dim=-1)

    def union_feature(self, box_i, box_j):
        return self.union_lift(pair_geometry(box_i, box_j))

    def edge_features(self, phi_v, categories, boxes, s_idx, o_idx):
        if len(s_idx) == 0:
            return phi_v.new_zeros((0, self.cfg.d_edge))
        u = self.union_feature(boxes[s_idx], boxes[o_idx])
        sem = self.sem(categories)
        return torch.cat(
            [self.W3(phi_v[s_idx]), self.W4(phi_v[o_idx]), self.W5(u), sem[s_idx], sem[o_idx]], dim=-1
        )
