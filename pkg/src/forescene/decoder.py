"""Query-based transformer decoder from a graph latent to a dense scene graph prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import mlp
from .graph import Edge, Node, SceneGraph
from .matching import box_cxcywh_to_xyxy

MIN_BOX_SIDE = 1e-3


@dataclass
class DecoderConfig:
    L: int = 6
    heads: int = 8
    d_head: int = 64
    N: int = 20
    z_tokens: int = 1
    ffn_mult: int = 4

    @property
    def d_model(self):
        return self.heads * self.d_head


@dataclass
class DecodedGraph:
    """Dense prediction for a batch (leading dim B) or a single graph (no batch dim).

    The last class column is the no-object class.
    """

    class_logits: torch.Tensor  # (B, N, |C|+1)
    boxes: torch.Tensor  # (B, N, 4) xyxy in [0, 1]
    rel_logits: torch.Tensor  # (B, N, N, |P|)
    con_logits: torch.Tensor  # (B, N, N)

    @property
    def class_probs(self):
        return self.class_logits.softmax(-1)

    @property
    def rel_probs(self):
        return torch.sigmoid(self.rel_logits)

    @property
    def con_probs(self):
        return torch.sigmoid(self.con_logits).unsqueeze(-1)

    def __getitem__(self, i):
        return DecodedGraph(self.class_logits[i], self.boxes[i], self.rel_logits[i], self.con_logits[i])

    def __len__(self):
        return self.class_logits.shape[0]

    @classmethod
    def from_probs(cls, class_probs, boxes, rel_probs, con_probs):
        """Build from probabilities (handy for hand-made fixtures)."""
        t = lambda x: torch.as_tensor(np.asarray(x, dtype=np.float64))
        cp, rp = t(class_probs), t(rel_probs)
        cn = t(con_probs).reshape(rp.shape[:-1])
        return cls(torch.log(cp.clamp(min=1e-30)), t(boxes), torch.logit(rp, eps=1e-12), torch.logit(cn, eps=1e-12))

    def numpy(self):
        """(class_probs, boxes, rel_probs, con_probs) as float64 arrays; con without the trailing axis."""
        f = lambda x: x.detach().cpu().double().numpy()
        return f(self.class_probs), f(self.boxes), f(self.rel_probs), f(torch.sigmoid(self.con_logits))


def _split_heads(x, heads):
    B, n, d = x.shape
    return x.view(B, n, heads, d // heads).transpose(1, 2)


def _attend(q, k, v, heads):
    q, k, v = (_split_heads(t, heads) for t in (q, k, v))
    w = (q @ k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    out = w.softmax(-1) @ v
    B, h, n, dh = out.shape
    return out.transpose(1, 2).reshape(B, n, h * dh)


class DecoderBlock(nn.Module):
    """Cross-attention to the latent memory, self-attention over queries, feed-forward."""

    def __init__(self, d_model, heads, ffn_mult):
        super().__init__()
        self.heads = heads
        self.norm_cross = nn.LayerNorm(d_model)
        self.cq = nn.Linear(d_model, d_model)
        self.ck = nn.Linear(d_model, d_model)
        self.cv = nn.Linear(d_model, d_model)
        self.co = nn.Linear(d_model, d_model)
        self.norm_self = nn.LayerNorm(d_model)
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn = mlp(d_model, ffn_mult * d_model, d_model)
        # subject / object projections of this block's attention queries and keys
        self.w_s = nn.Linear(d_model, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model, bias=False)

    def forward(self, h, memory):
        x = self.norm_cross(h)
        h = h + self.co(_attend(self.cq(x), self.ck(memory), self.cv(memory), self.heads))
        x = self.norm_self(h)
        q, k = self.q(x), self.k(x)
        h = h + self.o(_attend(q, k, self.v(x), self.heads))
        h = h + self.ffn(self.norm_ffn(h))
        return h, q, k


class GraphDecoder(nn.Module):
    def __init__(self, cfg, C, n_classes, n_predicates):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.memory_proj = nn.Linear(C, cfg.z_tokens * d)
        self.queries = nn.Parameter(torch.randn(cfg.N, d) * 0.1)
        self.blocks = nn.ModuleList(DecoderBlock(d, cfg.heads, cfg.ffn_mult) for _ in range(cfg.L))
        self.norm_out = nn.LayerNorm(d)
        self.gate = nn.Linear(2 * d, 1)
        self.rel_proj = nn.Linear(2 * d, d)
        self.mlp_objects = mlp(d, d, n_classes + 1)
        self.mlp_boxes = mlp(d, d, 4)
        self.mlp_edges = mlp(d, d, n_predicates)
        self.mlp_con = mlp(d, d, 1)

    def relation_features(self, qs, ks):
        """Gated sum over blocks of [Q W_S ; K W_O] pair features, then projected to d_model.

        Follows the gating design of the relation-extraction transformer this decoder
        adopts: per pair (i, j) and block l, R^l_ij = [Q^l_i W_S^l ; K^l_j W_O^l],
        g^l_ij = sigmoid(w_g . R^l_ij), R_ij = sum_l g^l_ij R^l_ij.
        """
        total = 0
        for blk, q, k in zip(self.blocks, qs, ks):
            s = blk.w_s(q)
            o = blk.w_o(k)
            n = s.shape[1]
            r = torch.cat([s.unsqueeze(2).expand(-1, -1, n, -1), o.unsqueeze(1).expand(-1, n, -1, -1)], dim=-1)
            total = total + torch.sigmoid(self.gate(r)) * r
        return F.relu(self.rel_proj(total))

    def forward(self, z):
        B = z.shape[0]
        memory = self.memory_proj(z).view(B, self.cfg.z_tokens, self.cfg.d_model)
        h = self.queries.unsqueeze(0).expand(B, -1, -1)
        qs, ks = [], []
        for blk in self.blocks:
            h, q, k = blk(h, memory)
            qs.append(q)
            ks.append(k)
        h = self.norm_out(h)
        boxes = box_cxcywh_to_xyxy(torch.sigmoid(self.mlp_boxes(h))).clamp(0.0, 1.0)
        rel = self.relation_features(qs, ks)
        return DecodedGraph(self.mlp_objects(h), boxes, self.mlp_edges(rel), self.mlp_con(rel).squeeze(-1))


@dataclass(frozen=True)
class Thresholds:
    tau_obj: float = 0.5
    tau_rel: float = 0.5
    tau_con: float = 0.5


def to_scene_graph(d, vocab, thresholds=Thresholds(), regime="no_constraint", frame_index=0):
    """Discretize one decoded graph.

    Queries whose best class is not the empty class and reaches tau_obj become nodes
    (one per category, highest confidence wins). An ordered pair becomes an edge when
    its connectivity reaches tau_con and at least one predicate reaches tau_rel; the
    constraint regime keeps only the best such predicate per kind.
    """
    probs, boxes, rel, con = d.numpy()
    empty = probs.shape[1] - 1
    best = {}
    for q in range(probs.shape[0]):
        c = int(probs[q].argmax())
        conf = float(probs[q, c])
        if c == empty or conf < thresholds.tau_obj:
            continue
        if c not in best or conf > best[c][1]:
            best[c] = (q, conf)
    slots = sorted(best.values(), key=lambda qc: -qc[1])
    nodes = []
    for q, _ in slots:
        x1, y1, x2, y2 = (float(v) for v in boxes[q])
        x2 = min(max(x2, x1 + MIN_BOX_SIDE), 1.0)
        x1 = min(x1, x2 - MIN_BOX_SIDE)
        y2 = min(max(y2, y1 + MIN_BOX_SIDE), 1.0)
        y1 = min(y1, y2 - MIN_BOX_SIDE)
        nodes.append(Node(int(probs[q].argmax()), (x1, y1, x2, y2)))
    kinds = np.asarray(vocab.kind_ids())
    edges = []
    for a, (qa, _) in enumerate(slots):
        for b, (qb, _) in enumerate(slots):
            if a == b or con[qa, qb] < thresholds.tau_con:
                continue
            ok = rel[qa, qb] >= thresholds.tau_rel
            if regime == "with_constraint":
                keep = np.zeros_like(ok)
                for k in np.unique(kinds):
                    idx = np.flatnonzero(kinds == k)
                    top = idx[rel[qa, qb, idx].argmax()]
                    keep[top] = ok[top]
                ok = keep
            preds = np.flatnonzero(ok).tolist()
            if preds:
                edges.append(Edge(a, b, preds))
    return SceneGraph(nodes, edges, frame_index)
