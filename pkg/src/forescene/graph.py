"""Scene graph data model shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

KINDS = ("attention", "spatial", "contacting")


@dataclass(frozen=True)
class Vocabulary:
    object_categories: tuple
    predicate_categories: tuple
    predicate_kinds: tuple  # kind name per predicate, aligned with predicate_categories

    def __post_init__(self):
        object.__setattr__(self, "object_categories", tuple(self.object_categories))
        object.__setattr__(self, "predicate_categories", tuple(self.predicate_categories))
        if isinstance(self.predicate_kinds, dict):
            kinds = tuple(self.predicate_kinds[p] for p in self.predicate_categories)
        else:
            kinds = tuple(self.predicate_kinds)
        object.__setattr__(self, "predicate_kinds", kinds)
        problems = self.problems()
        if problems:
            raise ValueError("invalid vocabulary: " + "; ".join(problems))

    def problems(self):
        out = []
        if len(set(self.object_categories)) != len(self.object_categories):
            out.append("duplicate object category names")
        if len(set(self.predicate_categories)) != len(self.predicate_categories):
            out.append("duplicate predicate names")
        if len(self.object_categories) < 2:
            out.append("need at least 2 object categories")
        if len(self.predicate_categories) < 1:
            out.append("need at least 1 predicate")
        if len(self.predicate_kinds) != len(self.predicate_categories):
            out.append("every predicate needs exactly one kind")
        for k in self.predicate_kinds:
            if k not in KINDS:
                out.append(f"unknown predicate kind {k!r}")
        return out

    @property
    def n_objects(self):
        return len(self.object_categories)

    @property
    def n_predicates(self):
        return len(self.predicate_categories)

    def object_index(self, name):
        return self.object_categories.index(name)

    def predicate_index(self, name):
        return self.predicate_categories.index(name)

    def kind_of(self, predicate):
        return self.predicate_kinds[predicate]

    def kind_ids(self):
        """Integer kind id per predicate, in KINDS order."""
        return tuple(KINDS.index(k) for k in self.predicate_kinds)

    def to_dict(self):
        return {
            "object_categories": list(self.object_categories),
            "predicate_categories": list(self.predicate_categories),
            "predicate_kinds": {p: k for p, k in zip(self.predicate_categories, self.predicate_kinds)},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["object_categories"], d["predicate_categories"], d["predicate_kinds"])


def default_vocabulary():
    """Eight object categories (person first) and six predicates over the three kinds."""
    return Vocabulary(
        ("person", "cup", "dish", "table", "chair", "book", "phone", "laptop"),
        ("looking_at", "not_looking_at", "in_front_of", "beside", "holding", "touching"),
        ("attention", "attention", "spatial", "spatial", "contacting", "contacting"),
    )


def _frozen_array(x, dtype=np.float32):
    a = np.array(x, dtype=dtype, copy=True).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Node:
    category: int
    box: tuple  # normalized (x1, y1, x2, y2)
    feature: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "category", int(self.category))
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        if self.feature is not None:
            object.__setattr__(self, "feature", _frozen_array(self.feature))

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        if self.category != other.category or self.box != other.box:
            return False
        if self.feature is None or other.feature is None:
            return self.feature is None and other.feature is None
        return self.feature.shape == other.feature.shape and bool(np.array_equal(self.feature, other.feature))

    def __hash__(self):
        return hash((self.category, self.box))


@dataclass(frozen=True)
class Edge:
    subject: int
    object: int
    predicates: frozenset

    def __post_init__(self):
        object.__setattr__(self, "subject", int(self.subject))
        object.__setattr__(self, "object", int(self.object))
        object.__setattr__(self, "predicates", frozenset(int(p) for p in self.predicates))


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple
    edges: tuple = ()
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "frame_index", int(self.frame_index))

    @property
    def categories(self):
        return [n.category for n in self.nodes]

    def triplets(self):
        """Set of (subject category, predicate, object category)."""
        out = set()
        for e in self.edges:
            s = self.nodes[e.subject].category
            o = self.nodes[e.object].category
            for p in e.predicates:
                out.add((s, p, o))
        return out


@dataclass(frozen=True)
class GraphSequence:
    video_id: str
    graphs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))

    @property
    def F_last(self):
        return self.graphs[-1].frame_index

    def __len__(self):
        return len(self.graphs)


def object_set(graph):
    return {n.category for n in graph.nodes}


def validate(graph, vocab, d_vis=None, ground_truth=True):
    """List every invariant the graph breaks; an empty list means the graph is usable."""
    out = []
    if len(graph.nodes) < 1:
        out.append("graph has no nodes")
    if graph.frame_index < 0:
        out.append(f"negative frame_index {graph.frame_index}")
    seen = set()
    for i, n in enumerate(graph.nodes):
        if not 0 <= n.category < vocab.n_objects:
            out.append(f"node {i}: category {n.category} outside vocabulary")
        if len(n.box) != 4:
            out.append(f"node {i}: box must have 4 coordinates")
            continue
        x1, y1, x2, y2 = n.box
        if not all(np.isfinite(v) and 0.0 <= v <= 1.0 for v in n.box):
            out.append(f"node {i}: box coordinate outside [0,1]")
        if not x1 < x2:
            out.append(f"node {i}: x1 >= x2")
        if not y1 < y2:
            out.append(f"node {i}: y1 >= y2")
        if d_vis is not None:
            if n.feature is None or n.feature.shape != (d_vis,):
                out.append(f"node {i}: visual feature must have dimension {d_vis}")
            elif not np.all(np.isfinite(n.feature)):
                out.append(f"node {i}: non-finite visual feature")
        if ground_truth and n.category in seen:
            out.append(f"node {i}: duplicate instance of category {n.category}")
        seen.add(n.category)
    pairs = set()
    for k, e in enumerate(graph.edges):
        if e.subject == e.object:
            out.append(f"edge {k}: self-loop on node {e.subject}")
        for end in (e.subject, e.object):
            if not 0 <= end < len(graph.nodes):
                out.append(f"edge {k}: node index {end} out of range")
        if (e.subject, e.object) in pairs:
            out.append(f"edge {k}: duplicate edge for pair ({e.subject}, {e.object})")
        pairs.add((e.subject, e.object))
        if ground_truth and not e.predicates:
            out.append(f"edge {k}: empty predicate set")
        for p in e.predicates:
            if not 0 <= p < vocab.n_predicates:
                out.append(f"edge {k}: predicate {p} outside vocabulary")
    return out


def validate_sequence(seq, vocab, d_vis=None):
    out = []
    if not seq.graphs:
        return ["sequence has no frames"]
    prev = -1
    for g in seq.graphs:
        if g.frame_index <= prev:
            out.append(f"frame_index {g.frame_index} not strictly increasing")
        prev = g.frame_index
        out.extend(f"frame {g.frame_index}: {v}" for v in validate(g, vocab, d_vis))
    return out


def permute_nodes(graph, perm):
    """Reorder nodes so that new node k is old node perm[k]; edges follow."""
    inv = {old: new for new, old in enumerate(perm)}
    nodes = [graph.nodes[i] for i in perm]
    edges = [Edge(inv[e.subject], inv[e.object], e.predicates) for e in graph.edges]
    return SceneGraph(nodes, edges, graph.frame_index)
