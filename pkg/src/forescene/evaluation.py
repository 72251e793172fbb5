"""Scoring of rollouts against ground truth, baselines, best-of-r selection and result tables.

A task is one (video, F_s) pair; a rollout supplies one FramePrediction per future frame.
Scores are keyed by (metric, K, regime):
    ("J_sim", 0, "")                   object-set Jaccard similarity
    ("object_recall", K, "")           K in OBJECT_KS
    ("triplet_recall", K, regime)      K in TRIPLET_KS, regime no_constraint / with_constraint
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .anticipation import FramePrediction, Rollout
from .graph import Node, SceneGraph, object_set
from .io import graph_to_record, record_to_graph
from .metrics import (
    NO_CONSTRAINT,
    OBJECT_KS,
    TRIPLET_KS,
    WITH_CONSTRAINT,
    jaccard_sim,
    object_recall_at_k,
    triplets_recall_at_k,
)

RESULT_COLUMNS = ("scope", "video_id", "F_s", "setting", "method", "r", "selection", "metric", "K", "regime", "value")
SELECTION_KEY = ("triplet_recall", 10, NO_CONSTRAINT)


def metric_keys(object_ks=OBJECT_KS, triplet_ks=TRIPLET_KS):
    keys = [("J_sim", 0, "")]
    keys += [("object_recall", K, "") for K in object_ks]
    for regime in (NO_CONSTRAINT, WITH_CONSTRAINT):
        keys += [("triplet_recall", K, regime) for K in triplet_ks]
    return keys


def score_frames(frames, ground_truth, object_ks=OBJECT_KS, triplet_ks=TRIPLET_KS):
    """Average every metric over the future frames of one rollout."""
    if len(frames) != len(ground_truth):
        raise ValueError(f"{len(frames)} predicted frames for {len(ground_truth)} ground-truth frames")
    gt_sets = [object_set(g) for g in ground_truth]
    gt_trip = [g.triplets() for g in ground_truth]
    n = len(frames)
    out = {("J_sim", 0, ""): jaccard_sim([object_set(f.graph) for f in frames], gt_sets)}
    for K in object_ks:
        out[("object_recall", K, "")] = sum(object_recall_at_k(f.objects, s, K) for f, s in zip(frames, gt_sets)) / n
    for regime, attr in ((NO_CONSTRAINT, "triplets_nc"), (WITH_CONSTRAINT, "triplets_wc")):
        for K in triplet_ks:
            out[("triplet_recall", K, regime)] = sum(
                triplets_recall_at_k(getattr(f, attr), t, K, regime) for f, t in zip(frames, gt_trip)) / n
    return out


def best_of(scores, r, selection="per_metric"):
    """Best-of-r over the first r score dicts (ordered by rollout seed).

    per_metric: each metric takes its own maximum over the pool, so values never decrease as r grows.
    r10_nc: one rollout is chosen by triplet R@10 no-constraint (ties to the lowest seed) and all
    its metrics are reported.
    """
    pool = scores[:r]
    if not pool:
        raise ValueError("no rollouts to select from")
    if selection == "per_metric":
        return {k: max(s[k] for s in pool) for k in pool[0]}
    if selection == "r10_nc":
        best = max(range(len(pool)), key=lambda i: (pool[i][SELECTION_KEY], -i))
        return dict(pool[best])
    raise ValueError(f"unknown selection {selection!r}")


# ---- baselines ----

def graph_prediction(graph, frame_index):
    """A FramePrediction that asserts exactly the given graph with confidence 1."""
    g = SceneGraph(graph.nodes, graph.edges, frame_index)
    objects = [(c, 1.0) for c in sorted(object_set(graph))]
    trips = sorted(graph.triplets())
    scored = [(s, p, o, 1.0) for s, p, o in trips]
    return FramePrediction(g, objects, scored, scored)


def copy_last_frames(observed, total_length):
    """Repeat the last observed graph for every future frame."""
    last = observed[-1]
    return [graph_prediction(last, f) for f in range(len(observed), total_length)]


def random_object_frames(vocab, n_future, start, rng, person=0, max_extra=3):
    """Each frame: the person plus 1..max_extra distinct random other categories, no relations."""
    others = [c for c in range(vocab.n_objects) if c != person]
    out = []
    for j in range(n_future):
        k = int(rng.integers(1, max_extra + 1))
        cats = [person] + sorted(int(c) for c in rng.choice(others, size=k, replace=False))
        g = SceneGraph([Node(c, (0.0, 0.0, 1.0, 1.0)) for c in cats], [], start + j)
        out.append(graph_prediction(g, start + j))
    return out


# ---- rollout files ----

def rollout_rows(rollout, vocab, setting=""):
    rows = []
    for f in rollout.frames:
        rows.append({
            "video_id": rollout.video_id,
            "F_s": rollout.F_s,
            "seed": rollout.seed,
            "setting": setting,
            "frame_index": f.graph.frame_index,
            "graph": graph_to_record(rollout.video_id, f.graph, vocab),
            "objects": [[int(c), float(s)] for c, s in f.objects],
            "triplets_nc": [[int(a), int(p), int(b), float(s)] for a, p, b, s in f.triplets_nc],
            "triplets_wc": [[int(a), int(p), int(b), float(s)] for a, p, b, s in f.triplets_wc],
        })
    return rows


def rollouts_from_rows(rows, vocab):
    """Group rows back into Rollouts keyed by (setting, video_id, F_s) -> [Rollout sorted by seed]."""
    groups = {}
    for row in rows:
        key = (row.get("setting", ""), row["video_id"], int(row["F_s"]))
        frames = groups.setdefault(key, {}).setdefault(int(row["seed"]), [])
        frames.append(FramePrediction(
            record_to_graph(row["graph"], vocab),
            [(int(c), float(s)) for c, s in row["objects"]],
            [(int(a), int(p), int(b), float(s)) for a, p, b, s in row["triplets_nc"]],
            [(int(a), int(p), int(b), float(s)) for a, p, b, s in row["triplets_wc"]],
        ))
    out = {}
    for (setting, vid, F_s), by_seed in groups.items():
        rs = []
        for seed in sorted(by_seed):
            frames = sorted(by_seed[seed], key=lambda f: f.graph.frame_index)
            rs.append(Rollout(vid, F_s, seed, frames))
        out[(setting, vid, F_s)] = rs
    return out


# ---- evaluation ----

@dataclass
class TaskScores:
    setting: str
    video_id: str
    F_s: int
    method: str
    per_rollout: list  # score dicts ordered by seed


def score_task(setting, method, rollouts, sequence):
    gt = list(sequence.graphs[rollouts[0].F_s + 1 :])
    return TaskScores(setting, sequence.video_id, rollouts[0].F_s, method,
                      [score_frames(r.frames, gt) for r in sorted(rollouts, key=lambda r: r.seed)])


def result_rows(tasks, rs=(1,), selection="per_metric", keys=None):
    """Per-task and aggregate result rows for every r in rs that the task's rollout pool can supply."""
    keys = keys or metric_keys()
    rows = []
    agg = {}
    for t in tasks:
        for r in rs:
            if r > len(t.per_rollout):
                continue
            best = best_of(t.per_rollout, r, selection)
            for k in keys:
                rows.append(_row("video", t.video_id, t.F_s, t.setting, t.method, r, selection, k, best[k]))
                agg.setdefault((t.setting, t.method, r, k), []).append(best[k])
    for (setting, method, r, k), vals in agg.items():
        rows.append(_row("aggregate", "", -1, setting, method, r, selection, k, float(np.mean(vals))))
    return rows


def _row(scope, vid, F_s, setting, method, r, selection, key, value):
    metric, K, regime = key
    return {"scope": scope, "video_id": vid, "F_s": F_s, "setting": setting, "method": method, "r": r,
            "selection": selection, "metric": metric, "K": K, "regime": regime, "value": float(value)}


def results_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({**row, "value": repr(float(row["value"]))})
    return buf.getvalue()


def read_results(text):
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        row.update(F_s=int(row["F_s"]), r=int(row["r"]), K=int(row["K"]), value=float(row["value"]))
        rows.append(row)
    return rows


def aggregate(rows):
    """{(setting, method, r, selection, metric, K, regime): value} from aggregate rows."""
    return {(r["setting"], r["method"], r["r"], r["selection"], r["metric"], r["K"], r["regime"]): r["value"]
            for r in rows if r["scope"] == "aggregate"}


def _label(metric, K, regime):
    if metric == "J_sim":
        return "J_sim"
    if metric == "object_recall":
        return f"Obj R@{K}"
    return f"{'NC' if regime == NO_CONSTRAINT else 'WC'} R@{K}"


def text_table(rows):
    """One block per setting; one line per (method, r, selection); values in percent."""
    agg = aggregate(rows)
    keys = sorted({(k[4], k[5], k[6]) for k in agg}, key=metric_keys().index)
    out = []
    for setting in sorted({k[0] for k in agg}):
        labels = [_label(*k) for k in keys]
        head = f"{'method':<16}{'r':>3} {'selection':<11}" + "".join(f"{lab:>11}" for lab in labels)
        out += [f"[{setting or 'all'}]", head, "-" * len(head)]
        for method, r, sel in sorted({(k[1], k[2], k[3]) for k in agg if k[0] == setting}):
            vals = "".join(f"{100 * agg[(setting, method, r, sel, *k)]:>11.2f}" for k in keys)
            out.append(f"{method:<16}{r:>3} {sel:<11}" + vals)
        out.append("")
    return "\n".join(out)
