import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forescene.metrics import (
    NO_CONSTRAINT,
    WITH_CONSTRAINT,
    jaccard_dist,
    jaccard_index,
    jaccard_sim,
    object_recall_at_k,
    rank_objects,
    rank_triplets,
    triplets_recall_at_k,
)


# ---- hand examples ----

def test_object_recall_examples():
    pred = [(0, 0.9), (1, 0.8), (5, 0.7), (6, 0.6), (7, 0.5), (2, 0.1)]
    assert object_recall_at_k(pred, {0, 1, 2}, 5) == pytest.approx(2 / 3)
    assert object_recall_at_k([], {0, 1}, 5) == 0.0
    assert object_recall_at_k(pred, {0, 1}, 5) == 1.0
    assert object_recall_at_k(pred, set(), 5) == 1.0


def test_jaccard_examples():
    person, cup, dish, table = 0, 1, 2, 3
    assert jaccard_sim([{person, cup}] * 3, [{person, cup}] * 3) == 1.0
    assert jaccard_index({person, cup}, {person, dish}) == pytest.approx(1 / 3)
    assert jaccard_sim([{cup}], [{dish}]) == 0.0
    assert jaccard_dist({person, cup}, {person, cup}) == 0.0
    assert jaccard_dist({cup}, {dish}) == 1.0
    assert jaccard_dist({person, cup}, {person, dish, table}) == pytest.approx(0.75)
    assert jaccard_dist(set(), set()) == 0.0
    assert jaccard_sim([set()], [set()]) == 1.0


def test_jaccard_sim_frame_count_checked():
    with pytest.raises(ValueError):
        jaccard_sim([{0}], [{0}, {1}])
    with pytest.raises(ValueError):
        jaccard_sim([{0}], [{0}], F_s=3, F_last=5)
    assert jaccard_sim([{0}, {0}], [{0}, {0}], F_s=3, F_last=5) == 1.0


def test_triplet_recall_examples():
    gt = {(0, 4, 1)}
    assert triplets_recall_at_k([(0, 4, 1, 0.9)], gt, 10) == 1.0
    gt4 = {(0, 4, 1), (0, 0, 1), (0, 2, 3), (0, 5, 2)}
    pred = [(0, 4, 1, 0.9), (0, 0, 1, 0.8), (0, 2, 3, 0.7)] + [(1, p, 2, 0.5 - 0.01 * p) for p in range(6)]
    assert triplets_recall_at_k(pred, gt4, 10) == 0.75
    assert triplets_recall_at_k([], set(), 10, WITH_CONSTRAINT) == 1.0
    with pytest.raises(ValueError):
        triplets_recall_at_k(pred, gt4, 0)
    with pytest.raises(ValueError):
        triplets_recall_at_k(pred, gt4, 10, "strict")


# ---- brute-force oracles ----

def oracle_topk(items, K):
    """Dedup identities keeping max score, take K by (score desc, identity asc), via explicit sort of all."""
    scores = {}
    for *ident, s in items:
        ident = tuple(ident)
        scores[ident] = max(scores.get(ident, -1.0), s)
    order = sorted(scores, key=lambda i: (-scores[i], i))
    return set(order[:K])


def oracle_recall(items, gt, K):
    if not gt:
        return Fraction(1)
    gt = {g if isinstance(g, tuple) else (g,) for g in gt}
    return Fraction(len(oracle_topk(items, K) & gt), len(gt))


def oracle_jaccard(a, b):
    u = set(a) | set(b)
    return Fraction(1) if not u else Fraction(len(set(a) & set(b)), len(u))


def random_instance(rng, n_cat=6, n_pred=4):
    objs = [(rng.randrange(n_cat), rng.choice([0.1, 0.25, 0.5, 0.75, 0.9])) for _ in range(rng.randrange(0, 9))]
    trips = [(rng.randrange(n_cat), rng.randrange(n_pred), rng.randrange(n_cat), rng.choice([0.1, 0.3, 0.5, 0.7]))
             for _ in range(rng.randrange(0, 15))]
    gt_o = set(rng.sample(range(n_cat), rng.randrange(0, 4)))
    gt_t = {(rng.randrange(n_cat), rng.randrange(n_pred), rng.randrange(n_cat)) for _ in range(rng.randrange(0, 5))}
    return objs, trips, gt_o, gt_t


def test_metrics_match_oracles_on_100_instances():
    rng = random.Random(7)
    for _ in range(100):
        objs, trips, gt_o, gt_t = random_instance(rng)
        for K in (1, 2, 3, 5, 10):
            assert object_recall_at_k(objs, gt_o, K) == float(oracle_recall(objs, gt_o, K))
            for regime in (NO_CONSTRAINT, WITH_CONSTRAINT):
                got = triplets_recall_at_k(trips, gt_t, K, regime)
                assert got == float(oracle_recall(trips, gt_t, K))
        a, b = set(rng.sample(range(6), rng.randrange(0, 4))), set(rng.sample(range(6), rng.randrange(0, 4)))
        assert jaccard_dist(a, b) == float(1 - oracle_jaccard(a, b))
        frames = [(set(rng.sample(range(6), rng.randrange(0, 4))), set(rng.sample(range(6), rng.randrange(0, 4))))
                  for _ in range(rng.randrange(1, 6))]
        expect = sum(oracle_jaccard(p, g) for p, g in frames) / len(frames)
        got = jaccard_sim([p for p, _ in frames], [g for _, g in frames])
        assert got == float(expect)


# ---- properties ----

sets = st.frozensets(st.integers(0, 7), max_size=6)


@given(sets, sets)
def test_jaccard_symmetric_bounded(a, b):
    assert jaccard_index(a, b) == jaccard_index(b, a)
    assert 0.0 <= jaccard_dist(a, b) <= 1.0
    assert (jaccard_index(a, b) == 1.0) == (a == b)


@given(st.lists(st.tuples(st.integers(0, 5), st.floats(0, 1)), max_size=10), sets)
def test_object_recall_monotone_in_k(pred, gt):
    vals = [object_recall_at_k(pred, gt, K) for K in range(1, 12)]
    assert all(x <= y for x, y in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def _random_decoded(rng, n=5, n_classes=4, P=6):
    logits = rng.normal(size=(n, n_classes + 1)) * 2
    probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    rel = rng.uniform(size=(n, n, P))
    con = rng.uniform(size=(n, n))
    return probs, rel, con


KINDS = [0, 0, 1, 1, 2, 2]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_triplets_against_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    probs, rel, con = _random_decoded(rng)
    labels = probs[:, :-1].argmax(1)
    conf = probs[np.arange(len(labels)), labels]
    n, _, P = rel.shape
    nc, wc = {}, {}
    for i, j in itertools.permutations(range(n), 2):
        for p in range(P):
            s = conf[i] * conf[j] * con[i, j] * rel[i, j, p]
            key = (labels[i], p, labels[j])
            nc[key] = max(nc.get(key, -1), s)
            same = [q for q in range(P) if KINDS[q] == KINDS[p]]
            if all(conf[i] * conf[j] * con[i, j] * rel[i, j, q] <= s for q in same) and \
                    p == min(q for q in same if rel[i, j, q] == rel[i, j, same].max()):
                wc[key] = max(wc.get(key, -1), s)
    for regime, ref in ((NO_CONSTRAINT, nc), (WITH_CONSTRAINT, wc)):
        got = rank_triplets(probs, rel, con, KINDS, regime)
        assert {(s, p, o): sc for s, p, o, sc in got} == pytest.approx(ref)
        assert [sc for *_, sc in got] == sorted((sc for *_, sc in got), reverse=True)


def test_rank_triplets_per_pair_constraint():
    rng = np.random.default_rng(3)
    probs, rel, con = _random_decoded(rng, n=3)
    per_pair = rank_triplets(probs, rel, con, KINDS, WITH_CONSTRAINT, constraint="per_pair")
    per_kind = rank_triplets(probs, rel, con, KINDS, WITH_CONSTRAINT)
    labels = probs[:, :-1].argmax(1)
    # at most one predicate per ordered query pair, so at most n(n-1) entries
    assert len(per_pair) <= 6
    assert {t[:3] for t in per_pair} <= {t[:3] for t in per_kind}
    assert set(labels.tolist()) >= {t[0] for t in per_pair}


def test_with_constraint_candidates_are_subset():
    rng = np.random.default_rng(0)
    for _ in range(20):
        probs, rel, con = _random_decoded(rng)
        nc = {t[:3]: t[3] for t in rank_triplets(probs, rel, con, KINDS, NO_CONSTRAINT)}
        wc = {t[:3]: t[3] for t in rank_triplets(probs, rel, con, KINDS, WITH_CONSTRAINT)}
        assert set(wc) <= set(nc)
        assert all(wc[k] <= nc[k] + 1e-15 for k in wc)


def test_rank_objects_dedups_by_max():
    probs = np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1], [0.1, 0.5, 0.4]])
    assert rank_objects(probs) == [(0, 0.7), (1, 0.5)]
