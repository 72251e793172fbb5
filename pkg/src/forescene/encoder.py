"""Triplet graph convolution encoder with auxiliary heads and max-pooled latent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .features import FeatureConfig, Featurizer


@dataclass
class EncoderConfig:
    gcn_layers: int = 5
    gcn_hidden: Optional[int] = None  # defaults to d_node
    C: int = 512
    encoder_pairs: str = "all"  # "all" ordered node pairs, or "annotated" edges only


@dataclass
class GraphBatch:
    vis: torch.Tensor  # (V, d_vis)
    box: torch.Tensor  # (V, 4)
    cat: torch.Tensor  # (V,)
    node_graph: torch.Tensor  # (V,)
    s_idx: torch.Tensor  # (E,) global node index
    o_idx: torch.Tensor
    edge_graph: torch.Tensor  # (E,)
    edge_targets: torch.Tensor  # (E, P) multi-hot
    n_graphs: int
    graphs: tuple = ()

    def to(self, dtype):
        return GraphBatch(self.vis.to(dtype), self.box.to(dtype), self.cat, self.node_graph, self.s_idx,
                          self.o_idx, self.edge_graph, self.edge_targets.to(dtype), self.n_graphs, self.graphs)


def encoder_pairs(graph, mode="all"):
    """Ordered (subject, object, predicate set) triples fed to the encoder."""
    annotated = {(e.subject, e.object): e.predicates for e in graph.edges}
    if mode == "annotated":
        return [(e.subject, e.object, e.predicates) for e in graph.edges]
    if mode != "all":
        raise ValueError(f"unknown encoder_pairs mode {mode!r}")
    n = len(graph.nodes)
    return [(i, j, annotated.get((i, j), frozenset())) for i in range(n) for j in range(n) if i != j]


def collate(graphs, n_predicates, mode="all", dtype=torch.float32):
    vis, box, cat, node_graph = [], [], [], []
    s_idx, o_idx, edge_graph, targets = [], [], [], []
    offset = 0
    for b, g in enumerate(graphs):
        for n in g.nodes:
            vis.append(n.feature)
            box.append(n.box)
            cat.append(n.category)
            node_graph.append(b)
        for s, o, preds in encoder_pairs(g, mode):
            s_idx.append(offset + s)
            o_idx.append(offset + o)
            edge_graph.append(b)
            t = np.zeros(n_predicates, dtype=np.float32)
            t[list(preds)] = 1.0
            targets.append(t)
        offset += len(g.nodes)
    long = lambda x: torch.tensor(x, dtype=torch.long)
    return GraphBatch(
        torch.tensor(np.stack(vis), dtype=dtype),
        torch.tensor(box, dtype=dtype),
        long(cat),
        long(node_graph),
        long(s_idx),
        long(o_idx),
        long(edge_graph),
        torch.tensor(np.stack(targets), dtype=dtype) if targets else torch.zeros((0, n_predicates), dtype=dtype),
        len(graphs),
        tuple(graphs),
    )


def mlp(d_in, d_hidden, d_out, final_relu=False):
    layers = [nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out)]
    if final_relu:
        layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class TripletConv(nn.Module):
    """One graph convolution over (subject, edge, object) triplets.

    Each triplet goes through an MLP whose output is split into new subject,
    edge and object vectors; node messages are averaged over incident triplets
    and refined by a second MLP. A self projection keeps isolated nodes alive.
    """

    def __init__(self, d_node, d_edge, hidden, d_node_out=None, d_edge_out=None):
        super().__init__()
        d_node_out = d_node_out or d_node
        d_edge_out = d_edge_out or d_edge
        self.hidden = hidden
        self.net1 = mlp(2 * d_node + d_edge, hidden, 2 * hidden + d_edge_out, final_relu=True)
        self.net2 = mlp(hidden, hidden, d_node_out)
        self.self_proj = nn.Linear(d_node, d_node_out)

    def forward(self, x, e, s_idx, o_idx):
        V = x.shape[0]
        out = x.new_zeros((V, self.net2[-1].out_features))
        if len(s_idx):
            t = self.net1(torch.cat([x[s_idx], e, x[o_idx]], dim=-1))
            new_s, new_e, new_o = t.split([self.hidden, t.shape[-1] - 2 * self.hidden, self.hidden], dim=-1)
            pooled = x.new_zeros((V, self.hidden)).index_add(0, s_idx, new_s).index_add(0, o_idx, new_o)
            counts = x.new_zeros(V).index_add(0, s_idx, x.new_ones(len(s_idx))).index_add(0, o_idx, x.new_ones(len(o_idx)))
            has = (counts > 0).to(x.dtype).unsqueeze(-1)
            out = has * self.net2(pooled / counts.clamp(min=1).unsqueeze(-1))
        else:
            new_e = e
        return F.relu(out + self.self_proj(x)), new_e


def segment_max(x, seg, n):
    out = x.new_zeros((n, x.shape[-1]))
    return out.scatter_reduce(0, seg.unsqueeze(-1).expand_as(x), x, reduce="amax", include_self=False)


@dataclass
class EncoderOutput:
    z: torch.Tensor  # (B, C)
    node_logits: torch.Tensor  # (V, |C|)
    edge_logits: torch.Tensor  # (E, |P|)


class GraphEncoder(nn.Module):
    def __init__(self, feat_cfg, enc_cfg, n_classes, n_predicates):
        super().__init__()
        self.feat_cfg, self.enc_cfg = feat_cfg, enc_cfg
        self.featurizer = Featurizer(feat_cfg, n_classes)
        hidden = enc_cfg.gcn_hidden or feat_cfg.d_node
        self.convs = nn.ModuleList(
            TripletConv(feat_cfg.d_node, feat_cfg.d_edge, hidden) for _ in range(enc_cfg.gcn_layers)
        )
        self.node_head = mlp(feat_cfg.d_node, feat_cfg.d_node, n_classes)
        self.edge_head = mlp(feat_cfg.d_edge, feat_cfg.d_edge, n_predicates)
        self.null_edge = nn.Parameter(torch.zeros(feat_cfg.d_edge))
        self.pool_proj = nn.Linear(feat_cfg.d_node + feat_cfg.d_edge, enc_cfg.C)

    def gcn_forward(self, phi_v, phi_e, s_idx, o_idx):
        for conv in self.convs:
            phi_v, phi_e = conv(phi_v, phi_e, s_idx, o_idx)
        return phi_v, phi_e

    def aux_heads(self, phi_v, phi_e):
        return self.node_head(phi_v), self.edge_head(phi_e)

    def forward(self, batch):
        f = self.featurizer
        phi_v = f.node_features(batch.vis, batch.box)
        phi_e = f.edge_features(phi_v, batch.cat, batch.box, batch.s_idx, batch.o_idx)
        phi_v, phi_e = self.gcn_forward(phi_v, phi_e, batch.s_idx, batch.o_idx)
        node_logits, edge_logits = self.aux_heads(phi_v, phi_e)
        B = batch.n_graphs
        pooled_v = segment_max(phi_v, batch.node_graph, B)
        pooled_e = self.null_edge.expand(B, -1)
        if len(batch.s_idx):
            has_edge = torch.zeros(B, dtype=torch.bool).index_fill(0, batch.edge_graph, True).unsqueeze(-1)
            pooled_e = torch.where(has_edge, segment_max(phi_e, batch.edge_graph, B), pooled_e)
        z = self.pool_proj(torch.cat([pooled_v, pooled_e], dim=-1))
        return EncoderOutput(z, node_logits, edge_logits)


def loss_enco(node_logits, edge_logits, batch):
    """(L_nodes, L_edges): mean node cross-entropy and per-edge summed predicate BCE, averaged over edges."""
    l_nodes = F.cross_entropy(node_logits, batch.cat)
    if edge_logits.shape[0]:
        l_edges = F.binary_cross_entropy_with_logits(edge_logits, batch.edge_targets, reduction="sum") / edge_logits.shape[0]
    else:
        l_edges = node_logits.new_zeros(())
    return l_nodes, l_edges
