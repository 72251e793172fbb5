"""Sliding-window rollout of future graph latents and their decoding into scene graphs.

Positions are 0-based indices into a video's frame list. Observing positions 0..F_s
leaves F_s+1..F_last to predict. Each window conditions on at most S/2 of the most
recent known latents and predicts the next S/2 unknown ones (fewer at the end), so
every future position is generated exactly once and known latents are never touched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .decoder import Thresholds, to_scene_graph
from .diffusion import reverse_diffuse
from .graph import SceneGraph
from .metrics import NO_CONSTRAINT, WITH_CONSTRAINT, rank_objects, rank_triplets, triplets_recall_at_k


@dataclass(frozen=True)
class Window:
    cond_start: int
    pred_start: int
    pred_end: int  # exclusive

    @property
    def width(self):
        return self.pred_end - self.cond_start


def plan_windows(n_known, total, S):
    """Windows covering positions n_known..total-1. S <= 0 means one window over everything."""
    if n_known < 1:
        raise ValueError("need at least one observed latent")
    out = []
    p = n_known
    while p < total:
        if S <= 0:
            out.append(Window(0, p, total))
            break
        half = S // 2
        end = min(p + half, total)
        out.append(Window(max(0, p - half), p, end))
        p = end
    return out


def rollout_latents(known, total, S, sample_fn, init_noise):
    """Extend known latents (n_known, C) to total positions.

    sample_fn(cond (k, C), init (m, C)) -> (m, C) produces one window's predictions;
    init_noise (total - n_known, C) gives the Gaussian initial state of every future slot.
    """
    n_known = known.shape[0]
    Z = torch.cat([known, init_noise], dim=0)
    for w in plan_windows(n_known, total, S):
        cond = Z[w.cond_start : w.pred_start]
        Z[w.pred_start : w.pred_end] = sample_fn(cond, init_noise[w.pred_start - n_known : w.pred_end - n_known])
    Z[:n_known] = known
    return Z


@dataclass
class FramePrediction:
    graph: SceneGraph
    objects: list  # [(category, confidence)] sorted descending
    triplets_nc: list  # [(subject, predicate, object, score)] sorted descending
    triplets_wc: list


@dataclass
class Rollout:
    video_id: str
    F_s: int
    seed: int
    frames: list  # FramePrediction for positions F_s+1..F_last
    latents: Optional[np.ndarray] = None
    written: tuple = ()  # future positions in the order the sampler produced them
    observed_intact: bool = True  # observed latents bit-identical after sampling

    @property
    def graphs(self):
        return [f.graph for f in self.frames]


@dataclass
class AnticipationRequest:
    video_id: str
    observed: list  # SceneGraphs at positions 0..F_s
    total_length: int  # F_last + 1
    rollouts: int = 1
    seed: int = 0

    @property
    def F_s(self):
        return len(self.observed) - 1


def generator_seed(seed, video_id):
    """Per-(rollout seed, video) stream so a rollout never depends on which videos share its batch."""
    h = hashlib.sha256(f"{seed}:{video_id}".encode()).digest()
    return int.from_bytes(h[:8], "little") & ((1 << 63) - 1)


@dataclass
class _Item:
    request: AnticipationRequest
    seed: int
    gen: torch.Generator
    Z: torch.Tensor
    n_known: int
    windows: list
    known: torch.Tensor = None
    writes: list = field(default_factory=list)


def anticipate_many(requests, gae, ldm, thresholds=Thresholds(), top_n=50, constraint="per_kind",
                    max_batch=256):
    """Roll out every request; same-step windows of different rollouts share a sampling batch.

    Rollout k of a request uses seed request.seed + k. Returns one list of Rollouts per request.
    """
    gae.eval()
    ldm.eval()
    S = ldm.window if ldm.diff_cfg.S > 0 else 0
    items = {id(r): [] for r in requests}
    flat = []
    with torch.no_grad():
        for req in requests:
            if req.total_length <= len(req.observed):
                continue
            known = ldm.normalize(gae.encode_graphs(list(req.observed)))
            n_future = req.total_length - known.shape[0]
            for k in range(req.rollouts):
                seed = req.seed + k
                gen = torch.Generator().manual_seed(generator_seed(seed, req.video_id))
                init = torch.randn((n_future, known.shape[1]), generator=gen, dtype=known.dtype)
                it = _Item(req, seed, gen, torch.cat([known, init]), known.shape[0],
                           plan_windows(known.shape[0], req.total_length, S), known.clone())
                items[id(req)].append(it)
                flat.append(it)
        step = 0
        while True:
            active = [it for it in flat if step < len(it.windows)]
            if not active:
                break
            for lo in range(0, len(active), max_batch):
                _run_windows(active[lo : lo + max_batch], step, ldm)
            step += 1
        futures = [ldm.denormalize(it.Z[it.n_known :]) for it in flat]
        frames = _decode_frames(futures, gae, thresholds, top_n, constraint, [it.request.F_s for it in flat])
    by_item = {id(it): f for it, f in zip(flat, frames)}
    out = []
    for req in requests:
        rs = []
        for it in items[id(req)]:
            rs.append(Rollout(req.video_id, req.F_s, it.seed, by_item[id(it)],
                              ldm.denormalize(it.Z[it.n_known :]).numpy(), tuple(it.writes),
                              bool(torch.equal(it.Z[: it.n_known], it.known))))
        out.append(rs)
    return out


def _run_windows(batch, step, ldm):
    Wmax = max(it.windows[step].width for it in batch)
    B, C = len(batch), batch[0].Z.shape[1]
    tokens = torch.zeros((B, Wmax, C), dtype=batch[0].Z.dtype)
    noised = torch.zeros((B, Wmax), dtype=torch.bool)
    valid = torch.zeros((B, Wmax), dtype=torch.bool)
    for b, it in enumerate(batch):
        w = it.windows[step]
        tokens[b, : w.width] = it.Z[w.cond_start : w.pred_end]
        noised[b, w.pred_start - w.cond_start : w.width] = True
        valid[b, : w.width] = True
    positions = torch.arange(Wmax).expand(B, Wmax)
    # the noised slots of tokens hold each rollout's initial Gaussian state
    x = reverse_diffuse(ldm.denoiser, tokens, noised, positions, ldm.schedule, [it.gen for it in batch],
                        valid=valid, init=tokens)
    for b, it in enumerate(batch):
        w = it.windows[step]
        off = w.pred_start - w.cond_start
        it.Z[w.pred_start : w.pred_end] = x[b, off : w.width]
        it.writes.extend(range(w.pred_start, w.pred_end))


def _decode_frames(futures, gae, thresholds, top_n, constraint, starts, chunk=512):
    if not futures:
        return []
    flat = torch.cat(futures)
    decoded = [gae.decode(flat[i : i + chunk]) for i in range(0, flat.shape[0], chunk)]
    out, pos = [], 0
    for lat, F_s in zip(futures, starts):
        frames = []
        for j in range(lat.shape[0]):
            d = decoded[(pos + j) // chunk][(pos + j) % chunk]
            frames.append(frame_prediction(d, gae.vocab, thresholds, top_n, constraint, F_s + 1 + j))
        out.append(frames)
        pos += lat.shape[0]
    return out


def frame_prediction(d, vocab, thresholds=Thresholds(), top_n=50, constraint="per_kind", frame_index=0):
    probs, _, rel, con = d.numpy()
    kinds = vocab.kind_ids()
    return FramePrediction(
        to_scene_graph(d, vocab, thresholds, frame_index=frame_index),
        [(int(c), float(s)) for c, s in rank_objects(probs)],
        rank_triplets(probs, rel, con, kinds, NO_CONSTRAINT, constraint, top_n),
        rank_triplets(probs, rel, con, kinds, WITH_CONSTRAINT, constraint, top_n),
    )


def anticipate(req, gae, ldm, **kw):
    return anticipate_many([req], gae, ldm, **kw)[0]


def recall10_nc(rollout, ground_truth):
    gts = [g.triplets() for g in ground_truth]
    return sum(triplets_recall_at_k(f.triplets_nc, gt, 10, NO_CONSTRAINT) for f, gt in zip(rollout.frames, gts)) / len(gts)


def select_best(rollouts, ground_truth, criterion=recall10_nc):
    """Rollout with the highest criterion(rollout, ground_truth); ties go to the lowest seed."""
    if not rollouts:
        raise ValueError("no rollouts to select from")
    return max(rollouts, key=lambda r: (criterion(r, ground_truth), -r.seed))
