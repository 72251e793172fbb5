"""Object discovery, Jaccard and triplet recall metrics.

Empty-set conventions live in this module only:
  * recall with an empty ground-truth set is 1 (nothing to recover)
  * Jaccard similarity of two empty sets is 1, so their distance is 0
Both cases are logged at debug level so reports can exclude them.
"""

from __future__ import annotations

import logging
from fractions import Fraction

import numpy as np

log = logging.getLogger(__name__)

OBJECT_KS = (5, 10, 20)
TRIPLET_KS = (10, 20, 50)
NO_CONSTRAINT = "no_constraint"
WITH_CONSTRAINT = "with_constraint"


# Set metrics are computed as exact fractions and rounded once, so results are the
# correctly rounded value of the set-arithmetic definition.

def _jaccard_exact(a, b):
    a, b = set(a), set(b)
    union = a | b
    if not union:
        log.debug("jaccard of two empty sets treated as 1")
        return Fraction(1)
    return Fraction(len(a & b), len(union))


def jaccard_index(a, b):
    return float(_jaccard_exact(a, b))


def jaccard_dist(a, b):
    return float(1 - _jaccard_exact(a, b))


def jaccard_sim(pred_sets, gt_sets, F_s=None, F_last=None):
    """Per-frame Jaccard index averaged over the future frames F_s+1..F_last."""
    pred_sets, gt_sets = list(pred_sets), list(gt_sets)
    if len(pred_sets) != len(gt_sets):
        raise ValueError(f"{len(pred_sets)} predicted frames vs {len(gt_sets)} ground-truth frames")
    if F_s is not None and F_last is not None and len(gt_sets) != F_last - F_s:
        raise ValueError(f"expected {F_last - F_s} future frames, got {len(gt_sets)}")
    if not gt_sets:
        raise ValueError("no future frames to score")
    return float(sum((_jaccard_exact(p, g) for p, g in zip(pred_sets, gt_sets)), Fraction(0)) / len(gt_sets))


def _top_unique(items, key_of, K):
    # items are (identity..., score); rank by score desc then identity for determinism
    best = {}
    for it in items:
        ident, score = key_of(it), float(it[-1])
        if ident not in best or score > best[ident]:
            best[ident] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [ident for ident, _ in ranked[:K]]


def object_recall_at_k(pred, gt, K):
    """pred: iterable of (category, confidence)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    gt = set(gt)
    if not gt:
        log.debug("object recall with empty ground truth treated as 1")
        return 1.0
    top = _top_unique(pred, lambda it: int(it[0]), K)
    return len(gt.intersection(top)) / len(gt)


def triplets_recall_at_k(pred, gt, K, regime=NO_CONSTRAINT):
    """pred: iterable of (subject cat, predicate, object cat, score), already built for `regime`."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if regime not in (NO_CONSTRAINT, WITH_CONSTRAINT):
        raise ValueError(f"unknown regime {regime!r}")
    gt = {tuple(map(int, t)) for t in gt}
    if not gt:
        log.debug("triplet recall with empty ground truth treated as 1")
        return 1.0
    top = _top_unique(pred, lambda it: (int(it[0]), int(it[1]), int(it[2])), K)
    return len(gt.intersection(top)) / len(gt)


def mean_over_frames(fn, preds, gts, K, *args):
    if len(preds) != len(gts) or not gts:
        raise ValueError("need one prediction per future frame")
    return sum(fn(p, g, K, *args) for p, g in zip(preds, gts)) / len(gts)


# ---- ranking decoded outputs ----

def query_labels(class_probs):
    """Best non-empty class and its probability for each query slot."""
    real = np.asarray(class_probs)[:, :-1]
    labels = real.argmax(axis=1)
    return labels, real[np.arange(len(labels)), labels]


def rank_objects(class_probs):
    labels, conf = query_labels(class_probs)
    best = {}
    for c, s in zip(labels.tolist(), conf.tolist()):
        if c not in best or s > best[c]:
            best[c] = s
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))


def rank_triplets(class_probs, rel_probs, con_probs, kind_ids, regime=NO_CONSTRAINT,
                  constraint="per_kind", top_n=None):
    """Score every (subject query, predicate, object query) and rank unique category triplets.

    score = conf_subject * conf_object * connectivity * predicate probability.
    With the constraint regime only the best predicate per ordered pair and kind survives
    (or per ordered pair when constraint == "per_pair").
    """
    labels, conf = query_labels(class_probs)
    rel = np.asarray(rel_probs, dtype=np.float64)
    con = np.asarray(con_probs, dtype=np.float64).reshape(rel.shape[0], rel.shape[1])
    n, _, P = rel.shape
    score = conf[:, None, None] * conf[None, :, None] * con[:, :, None] * rel
    keep = np.ones_like(score, dtype=bool)
    keep[np.arange(n), np.arange(n), :] = False
    if regime == WITH_CONSTRAINT:
        kind_ids = np.asarray(kind_ids)
        groups = [np.arange(P)] if constraint == "per_pair" else [np.flatnonzero(kind_ids == k) for k in np.unique(kind_ids)]
        mask = np.zeros_like(keep)
        for g in groups:
            best = g[score[:, :, g].argmax(axis=2)]
            ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            mask[ii, jj, best] = True
        keep &= mask
    elif regime != NO_CONSTRAINT:
        raise ValueError(f"unknown regime {regime!r}")
    ii, jj, pp = np.nonzero(keep)
    best = {}
    for i, j, p, s in zip(labels[ii].tolist(), labels[jj].tolist(), pp.tolist(), score[ii, jj, pp].tolist()):
        key = (i, p, j)
        if key not in best or s > best[key]:
            best[key] = s
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_n is not None:
        ranked = ranked[:top_n]
    return [(s, p, o, sc) for (s, p, o), sc in ranked]
