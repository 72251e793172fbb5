"""Graph auto-encoder: losses, training loop and inference helpers."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .decoder import DecoderConfig, GraphDecoder
from .encoder import EncoderConfig, GraphBatch, GraphEncoder, collate, loss_enco
from .features import FeatureConfig
from .matching import MatchWeights, generalized_box_iou, hungarian_match

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "L_enco", "L_obj", "L_rel", "L_con", "L_reg", "total")


@dataclass
class LossWeights:
    lambda_obj: float = 2.0
    lambda_rel: float = 15.0
    lambda_con: float = 30.0
    lambda_c: float = 1.0
    lambda_b: float = 1.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    eos_coef: float = 0.1
    cost_class: float = 1.0
    cost_bbox: float = 5.0
    cost_giou: float = 2.0
    beta: float = 0.1
    lambda_dec: float = 1e-4
    aux_loss: bool = True

    def match_weights(self):
        return MatchWeights(self.cost_class, self.cost_bbox, self.cost_giou)


@dataclass
class GAEConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(FeatureConfig(**d["features"]), EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]))


@dataclass
class GAETrainConfig:
    gae_epochs: int = 300
    gae_batch: int = 32
    gae_lr: float = 1e-3
    gae_lr_min: float = 0.0
    gae_grad_clip: float = 1.0
    gae_weight_decay: float = 0.0  # decoupled (AdamW); 0 is plain Adam
    gae_feature_noise: float = 0.0  # std of Gaussian noise added to visual features while training


class GraphAutoEncoder(nn.Module):
    def __init__(self, cfg, vocab):
        super().__init__()
        self.cfg, self.vocab = cfg, vocab
        n_classes, n_predicates = vocab.n_objects, vocab.n_predicates
        self.n_classes, self.n_predicates = n_classes, n_predicates
        self.encoder = GraphEncoder(cfg.features, cfg.encoder, n_classes, n_predicates)
        self.decoder = GraphDecoder(cfg.decoder, cfg.encoder.C, n_classes, n_predicates)

    def collate(self, graphs, dtype=None):
        dtype = dtype or next(self.parameters()).dtype
        return collate(graphs, self.n_predicates, self.cfg.encoder.encoder_pairs, dtype)

    def encode(self, batch):
        return self.encoder(batch).z

    def decode(self, z):
        return self.decoder(z)

    @torch.no_grad()
    def encode_graphs(self, graphs, chunk=256):
        self.eval()
        out = [self.encode(self.collate(graphs[i : i + chunk])) for i in range(0, len(graphs), chunk)]
        return torch.cat(out) if out else torch.zeros((0, self.cfg.encoder.C))


# ---- losses ----

def _targets(graph, dtype):
    cats = torch.tensor([n.category for n in graph.nodes], dtype=torch.long)
    boxes = torch.tensor([n.box for n in graph.nodes], dtype=dtype).reshape(-1, 4)
    return cats, boxes


def match_batch(decoded, graphs, weights):
    probs = decoded.class_probs.detach()
    if not (torch.isfinite(probs).all() and torch.isfinite(decoded.boxes).all()):
        raise FloatingPointError("non-finite decoder output; cannot match")
    out = []
    for b, g in enumerate(graphs):
        cats, boxes = _targets(g, probs.dtype)
        out.append(hungarian_match(probs[b], decoded.boxes[b].detach(), cats, boxes, weights.match_weights()))
    return out


def loss_obj(decoded, graphs, matches, weights):
    """Weighted class cross-entropy over every slot plus L1 + GIoU on matched slots.

    decoded carries a leading batch dimension; the class term is the weighted mean over all
    slots in the batch (empty-class slots weighted eos_coef), the box term is summed over
    matched slots and divided by the number of ground-truth nodes.
    """
    logits = decoded.class_logits
    B, N, K = logits.shape
    empty = K - 1
    target = torch.full((B, N), empty, dtype=torch.long)
    qb, qi, gt_boxes = [], [], []
    for b, (g, m) in enumerate(zip(graphs, matches)):
        cats, boxes = _targets(g, logits.dtype)
        for q, t in m.pairs:
            target[b, q] = cats[t]
            qb.append(b)
            qi.append(q)
            gt_boxes.append(boxes[t])
    w = torch.ones(K, dtype=logits.dtype)
    w[empty] = weights.eos_coef
    l_c = F.cross_entropy(logits.reshape(B * N, K), target.reshape(-1), weight=w)
    n_boxes = max(len(qb), 1)
    if qb:
        pred = decoded.boxes[qb, qi]
        gt = torch.stack(gt_boxes)
        l1 = (pred - gt).abs().sum()
        giou = (1 - torch.diagonal(generalized_box_iou(pred, gt))).sum()
        l_b = (weights.lambda_l1 * l1 + weights.lambda_giou * giou) / n_boxes
    else:
        l_b = logits.new_zeros(())
    return weights.lambda_c * l_c + weights.lambda_b * l_b


def relation_targets(graphs, matches, N, P, dtype=torch.float32):
    rel = torch.zeros((len(graphs), N, N, P), dtype=dtype)
    for b, (g, m) in enumerate(zip(graphs, matches)):
        slot = {t: q for q, t in m.pairs}
        for e in g.edges:
            for p in e.predicates:
                rel[b, slot[e.subject], slot[e.object], p] = 1.0
    con = (rel.amax(-1) > 0).to(dtype)
    return rel, con


def loss_rel_con(decoded, graphs, matches):
    """Mean BCE over off-diagonal cells of the relation and connectivity matrices."""
    B, N, _, P = decoded.rel_logits.shape
    rel_t, con_t = relation_targets(graphs, matches, N, P, decoded.rel_logits.dtype)
    off = ~torch.eye(N, dtype=torch.bool)
    l_rel = F.binary_cross_entropy_with_logits(decoded.rel_logits[:, off], rel_t[:, off])
    l_con = F.binary_cross_entropy_with_logits(decoded.con_logits[:, off], con_t[:, off])
    return l_rel, l_con


def loss_reg(z, decoder_params, weights):
    """beta * 0.5 * ||z||^2 (averaged over the batch) + lambda_dec * sum of squared decoder weights."""
    z = z.reshape(-1, z.shape[-1])
    latent = 0.5 * (z * z).sum(-1).mean()
    decay = sum((p * p).sum() for p in decoder_params)
    return weights.beta * latent + weights.lambda_dec * decay


def gae_losses(model, batch, weights):
    enc = model.encoder(batch)
    decoded = model.decoder(enc.z)
    matches = match_batch(decoded, batch.graphs, weights)
    zero = enc.z.new_zeros(())
    if weights.aux_loss:
        l_nodes, l_edges = loss_enco(enc.node_logits, enc.edge_logits, batch)
        l_enco = l_nodes + l_edges
    else:
        l_enco = zero
    l_obj = loss_obj(decoded, batch.graphs, matches, weights)
    l_rel, l_con = loss_rel_con(decoded, batch.graphs, matches)
    l_reg = loss_reg(enc.z, model.decoder.parameters(), weights)
    total = l_enco + weights.lambda_obj * l_obj + weights.lambda_rel * l_rel + weights.lambda_con * l_con + l_reg
    return {"L_enco": l_enco, "L_obj": l_obj, "L_rel": l_rel, "L_con": l_con, "L_reg": l_reg, "total": total}


# ---- training ----

class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


def cosine_lr(base, step, total, floor=0.0):
    if total <= 1:
        return base
    return floor + 0.5 * (base - floor) * (1 + math.cos(math.pi * min(step, total) / total))


def curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in CURVE_COLUMNS[1:]])
    return buf.getvalue()


def read_curve(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def train_gae(graphs, vocab, cfg=None, train=None, weights=None, seed=0,
              model=None, optimizer_state=None, start_epoch=0, history=None, on_epoch=None):
    """Optimize encoder + decoder jointly. Returns (model, optimizer, history rows).

    Resuming: pass the previous model, optimizer state, last finished epoch and history;
    epochs continue from start_epoch + 1 up to train.gae_epochs.
    """
    cfg = cfg or GAEConfig()
    train = train or GAETrainConfig()
    weights = weights or LossWeights()
    torch.manual_seed(seed)
    if model is None:
        model = GraphAutoEncoder(cfg, vocab)
    opt = torch.optim.AdamW(model.parameters(), lr=train.gae_lr, weight_decay=train.gae_weight_decay)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    n_decoder = cfg.decoder.N
    too_big = max(len(g.nodes) for g in graphs)
    if too_big > n_decoder:
        raise ValueError(f"a graph has {too_big} nodes but N={n_decoder}; increase N")
    rng = np.random.default_rng(seed + start_epoch)
    steps_per_epoch = math.ceil(len(graphs) / train.gae_batch)
    total_steps = steps_per_epoch * train.gae_epochs
    history = list(history or [])
    for epoch in range(start_epoch + 1, train.gae_epochs + 1):
        model.train()
        order = rng.permutation(len(graphs))
        sums = {c: 0.0 for c in CURVE_COLUMNS[1:]}
        t0 = time.time()
        for k in range(steps_per_epoch):
            idx = order[k * train.gae_batch : (k + 1) * train.gae_batch]
            batch = model.collate([graphs[i] for i in idx])
            if train.gae_feature_noise > 0:
                batch = replace(batch, vis=batch.vis + train.gae_feature_noise * torch.randn_like(batch.vis))
            step = (epoch - 1) * steps_per_epoch + k
            for group in opt.param_groups:
                group["lr"] = cosine_lr(train.gae_lr, step, total_steps, train.gae_lr_min)
            try:
                losses = gae_losses(model, batch, weights)
            except FloatingPointError:
                losses = {c: torch.tensor(float("nan")) for c in CURVE_COLUMNS[1:]}
            if not torch.isfinite(losses["total"]):
                snap = {"epoch": epoch, "step": k, "losses": {n: v.item() for n, v in losses.items()},
                        "batch_frames": [g.frame_index for g in batch.graphs]}
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {k}: {snap['losses']}", snap)
            opt.zero_grad()
            losses["total"].backward()
            if train.gae_grad_clip > 0:
                nn.utils.clip_grad_norm_(model.parameters(), train.gae_grad_clip)
            opt.step()
            for c in sums:
                sums[c] += losses[c].item() * len(idx)
        row = {"epoch": epoch, **{c: v / len(graphs) for c, v in sums.items()}}
        history.append(row)
        log.info("epoch %d total %.4f (%.1fs)", epoch, row["total"], time.time() - t0)
        if on_epoch is not None:
            on_epoch(epoch, model, opt, history)
    return model, opt, history
