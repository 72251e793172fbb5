import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from forescene.matching import (
    MatchWeights,
    assign,
    box_cxcywh_to_xyxy,
    generalized_box_iou,
    hungarian_match,
    match_cost,
)


def exhaustive(cost):
    """Minimum over all injections of columns into rows, summing in column order."""
    N, M = cost.shape
    best, arg = np.inf, None
    for rows in itertools.permutations(range(N), M):
        total = 0.0
        for col, row in enumerate(rows):
            total += cost[row, col]
        if total < best:
            best, arg = total, rows
    return best, arg


def assigned_total(result, cost):
    total = 0.0
    for q, t in result.pairs:  # pairs are sorted by gt column
        total += cost[q, t]
    return total


def test_assign_matches_exhaustive_500_trials():
    rng = np.random.default_rng(0)
    for trial in range(500):
        N = int(rng.integers(1, 7))
        M = int(rng.integers(0, N + 1))
        if trial % 2:
            cost = rng.integers(-20, 20, size=(N, M)).astype(float)  # ties likely
        else:
            cost = rng.normal(size=(N, M))
        res = assign(cost)
        best, _ = exhaustive(cost)
        assert assigned_total(res, cost) == best
        assert sorted(res.targets) == list(range(M))
        assert len(set(res.queries)) == M
        assert sorted(res.queries + res.unmatched) == list(range(N))


def test_assign_rejects_too_many_targets():
    with pytest.raises(ValueError, match="increase N"):
        assign(np.zeros((2, 3)))


def test_identity_example():
    cost = np.array([[0.0, 5.0], [5.0, 0.0], [3.0, 3.0]])
    assert assign(cost).pairs == ((0, 0), (1, 1))
    assert assign(cost).unmatched == [2]


# ---- scalar oracle for the cost itself ----

def giou_scalar(a, b):
    def area(x):
        return (x[2] - x[0]) * (x[3] - x[1])
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = area(a) + area(b) - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / union - (hull - union) / hull


def random_boxes(rng, n):
    c = rng.uniform(0.2, 0.8, size=(n, 2))
    wh = rng.uniform(0.05, 0.4, size=(n, 2))
    return box_cxcywh_to_xyxy(torch.tensor(np.concatenate([c, wh], 1))).numpy()


def test_giou_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    a, b = random_boxes(rng, 5), random_boxes(rng, 4)
    got = generalized_box_iou(torch.tensor(a), torch.tensor(b)).numpy()
    ref = np.array([[giou_scalar(x, y) for y in b] for x in a])
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)
    assert generalized_box_iou(torch.tensor(a[:1]), torch.tensor(a[:1])).item() == pytest.approx(1.0)


def test_hungarian_match_on_decoder_outputs_matches_oracle():
    rng = np.random.default_rng(2)
    w = MatchWeights()
    for _ in range(100):
        N, M, K = int(rng.integers(1, 7)), 0, 5
        M = int(rng.integers(0, N + 1))
        logits = rng.normal(size=(N, K + 1))
        probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        boxes, gt_boxes = random_boxes(rng, N), random_boxes(rng, M)
        cats = rng.integers(0, K, size=M)
        cost = np.array([[-w.cost_class * probs[q, cats[t]]
                          + w.cost_bbox * np.abs(boxes[q] - gt_boxes[t]).sum()
                          - w.cost_giou * giou_scalar(boxes[q], gt_boxes[t]) for t in range(M)] for q in range(N)])
        cost = cost.reshape(N, M)
        np.testing.assert_allclose(match_cost(probs, boxes, cats, gt_boxes, w).numpy(), cost, atol=1e-12)
        res = hungarian_match(probs, boxes, cats, gt_boxes, w)
        best, _ = exhaustive(cost)
        assert assigned_total(res, cost) == pytest.approx(best, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.data())
def test_assignment_invariant_to_row_permutation(N, data):
    M = data.draw(st.integers(0, N))
    seed = data.draw(st.integers(0, 2**16))
    rng = np.random.default_rng(seed)
    cost = rng.normal(size=(N, M))
    perm = rng.permutation(N)
    a = assigned_total(assign(cost), cost)
    b = assigned_total(assign(cost[perm]), cost[perm])
    assert a == pytest.approx(b, abs=1e-12)
