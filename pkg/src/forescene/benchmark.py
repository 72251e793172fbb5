"""Object-distribution-shift splits (MID / HARD) over a graph-sequence corpus.

Frame positions are 0-based list indices into a video's graphs. A split with
last observed position F_s observes positions 0..F_s and anticipates F_s+1..end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import object_set
from .metrics import jaccard_dist

MIN_FRAMES = 10
EDGE_MARGIN = 3
TOP_PER_VIDEO = 3
MID_LOW = 0.33
HARD_LOW = 0.66


def tier_of(difficulty):
    """MID for [0.33, 0.66), HARD for [0.66, 1], None below."""
    if difficulty >= HARD_LOW:
        return "HARD"
    if difficulty >= MID_LOW:
        return "MID"
    return None


@dataclass(frozen=True)
class AnticipationSplit:
    video_id: str
    F_s: int
    difficulty: float
    tier: str

    def to_record(self):
        return {"video_id": self.video_id, "F_s": self.F_s, "difficulty": self.difficulty, "tier": self.tier}

    @classmethod
    def from_record(cls, r):
        return cls(str(r["video_id"]), int(r["F_s"]), float(r["difficulty"]), str(r["tier"]))


def candidate_positions(n_frames):
    """Admissible F_s: never one of the first or last three frames."""
    return range(EDGE_MARGIN, n_frames - EDGE_MARGIN)


def video_candidates(seq):
    sets = [object_set(g) for g in seq.graphs]
    return [(F_s, jaccard_dist(sets[F_s], sets[F_s + 1])) for F_s in candidate_positions(len(sets))
            if F_s + 1 < len(sets)]


def build_splits(corpus):
    out = []
    for seq in corpus:
        if len(seq.graphs) < MIN_FRAMES:
            continue
        cands = video_candidates(seq)
        # top-3 first (ties to earlier F_s), then tier filter
        top = sorted(cands, key=lambda c: (-c[1], c[0]))[:TOP_PER_VIDEO]
        for F_s, d in sorted(top):
            tier = tier_of(d)
            if tier is not None:
                out.append(AnticipationSplit(seq.video_id, F_s, d, tier))
    return out


def split_stats(splits, lengths=None, bins=10):
    """Counts per tier, difficulty CDF and (if video lengths are given) observed-fraction histograms."""
    counts = {"MID": 0, "HARD": 0}
    for s in splits:
        counts[s.tier] += 1
    d = np.sort(np.array([s.difficulty for s in splits], dtype=float))
    cdf = (d, np.arange(1, len(d) + 1) / len(d)) if len(d) else (d, d.copy())
    hist = {}
    if lengths is not None:
        edges = np.linspace(0.0, 1.0, bins + 1)
        for tier in ("MID", "HARD"):
            frac = [(s.F_s + 1) / lengths[s.video_id] for s in splits if s.tier == tier]
            hist[tier] = np.histogram(frac, bins=edges)[0]
        hist["edges"] = edges
    return {"counts": counts, "total": len(splits), "cdf_x": cdf[0], "cdf_y": cdf[1], "observed_hist": hist}
