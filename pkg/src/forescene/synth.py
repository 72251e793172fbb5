"""Seeded synthetic activity videos: phases of objects that appear, disappear and interact.

Node features are category-conditioned Gaussians. Each predicate attached to an
object also shifts that object's feature by a fixed signature vector, so relations
are recoverable from node features alone (as they would be from detector features).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .benchmark import tier_of
from .graph import KINDS, Edge, GraphSequence, Node, SceneGraph, default_vocabulary

PERSON = 0


@dataclass(frozen=True)
class Phase:
    duration: int
    objects: tuple  # non-person categories active in this phase
    relations: tuple = ()  # (object category, predicate, probability) for person -> object

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(sorted(set(int(o) for o in self.objects))))
        object.__setattr__(self, "relations", tuple((int(o), int(p), float(q)) for o, p, q in self.relations))


@dataclass(frozen=True)
class ActivityScript:
    phases: tuple
    vocab: object = field(default_factory=default_vocabulary)
    feature_std: float = 0.3
    box_jitter: float = 0.01
    d_vis: int = 64
    world_seed: int = 0
    relation_strength: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        problems = self.problems()
        if problems:
            raise ValueError("invalid script: " + "; ".join(problems))

    def problems(self):
        out = []
        if not self.phases:
            out.append("script has no phases")
        for k, ph in enumerate(self.phases):
            if ph.duration < 1:
                out.append(f"phase {k}: duration must be >= 1")
            if PERSON in ph.objects:
                out.append(f"phase {k}: person is implicit and must not be listed")
            for o in ph.objects:
                if not 0 < o < self.vocab.n_objects:
                    out.append(f"phase {k}: category {o} outside vocabulary")
            for o, p, q in ph.relations:
                if o not in ph.objects:
                    out.append(f"phase {k}: relation on inactive object {o}")
                if not 0 <= p < self.vocab.n_predicates or not 0.0 <= q <= 1.0:
                    out.append(f"phase {k}: bad relation ({o}, {p}, {q})")
            for o in ph.objects:
                for kind in KINDS:
                    mass = sum(q for oo, p, q in ph.relations if oo == o and self.vocab.kind_of(p) == kind)
                    if mass > 1.0 + 1e-9:
                        out.append(f"phase {k}: object {o} {kind} probabilities exceed 1")
        return out

    @property
    def length(self):
        return sum(ph.duration for ph in self.phases)

    def object_sets(self):
        return [frozenset((PERSON,) + ph.objects) for ph in self.phases]


@lru_cache(maxsize=16)
def _world(n_objects, n_predicates, d_vis, world_seed):
    rng = np.random.default_rng(world_seed)
    means = rng.normal(size=(n_objects, d_vis))
    signatures = rng.normal(size=(n_predicates, d_vis)) * 0.5
    sizes = rng.uniform(0.08, 0.22, size=(n_objects, 2))
    sizes[PERSON] = (0.3, 0.7)
    for a in (means, signatures, sizes):
        a.flags.writeable = False
    return means, signatures, sizes


def category_means(vocab, d_vis, world_seed=0):
    return _world(vocab.n_objects, vocab.n_predicates, d_vis, world_seed)[0]


def _box(center, size):
    w, h = size
    cx = float(np.clip(center[0], w / 2, 1 - w / 2))
    cy = float(np.clip(center[1], h / 2, 1 - h / 2))
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _sample_predicates(phase, obj, vocab, rng):
    preds = set()
    for kind in KINDS:
        opts = [(p, q) for o, p, q in phase.relations if o == obj and vocab.kind_of(p) == kind]
        if not opts:
            continue
        u = rng.random()
        acc = 0.0
        for p, q in opts:
            acc += q
            if u < acc:
                preds.add(p)
                break
    return preds


def generate(script, seed, video_id="video"):
    """Render a script frame by frame; identical (script, seed) gives an identical sequence."""
    vocab = script.vocab
    means, signatures, sizes = _world(vocab.n_objects, vocab.n_predicates, script.d_vis, script.world_seed)
    rng = np.random.default_rng(seed)
    contact = {p for p in range(vocab.n_predicates) if vocab.kind_of(p) == "contacting"}
    person_center = np.array([0.5, 0.55]) + rng.uniform(-0.1, 0.1, size=2)
    person_size = sizes[PERSON] * rng.uniform(0.9, 1.1, size=2)
    anchors = rng.uniform(0.15, 0.85, size=(vocab.n_objects, 2))
    wobble = rng.uniform(0, 2 * np.pi, size=(vocab.n_objects, 2))
    hand = person_center + np.array([rng.choice([-0.12, 0.12]), 0.05])

    graphs = []
    t = 0
    for phase in script.phases:
        for _ in range(phase.duration):
            drift = 0.03 * np.sin(2 * np.pi * t / 12.0 + wobble)
            pbox = _box(person_center + drift[PERSON] + rng.normal(0, script.box_jitter, 2), person_size)
            pfeat = means[PERSON] + rng.normal(0, script.feature_std, script.d_vis)
            nodes = [Node(PERSON, pbox, pfeat.astype(np.float32))]
            edges = []
            for obj in phase.objects:
                preds = _sample_predicates(phase, obj, vocab, rng)
                center = anchors[obj] + drift[obj]
                if preds & contact:
                    center = 0.5 * center + 0.5 * hand
                center = center + rng.normal(0, script.box_jitter, 2)
                feat = means[obj] + rng.normal(0, script.feature_std, script.d_vis)
                for p in preds:
                    feat = feat + script.relation_strength * signatures[p]
                nodes.append(Node(obj, _box(center, sizes[obj]), feat.astype(np.float32)))
                if preds:
                    edges.append(Edge(0, len(nodes) - 1, preds))
            graphs.append(SceneGraph(nodes, edges, t))
            t += 1
    return GraphSequence(video_id, graphs)


def phase_boundaries(script):
    """(F_s, exact J_dist) for each phase switch, F_s being the last frame of the earlier phase."""
    out = []
    t = -1
    sets = script.object_sets()
    for k, ph in enumerate(script.phases[:-1]):
        t += ph.duration
        a, b = sets[k], sets[k + 1]
        out.append((t, Fraction(len(a ^ b), len(a | b))))
    return out


# ---- scripted library for end-to-end runs ----
# Each object set occurs in one place only, so the next phase is determined by the current one.

SCRIPT_LIBRARY = {
    "hard_kitchen": ("hard", [(6, ("cup",)), (7, ("dish", "table")), (7, ("book",)), (7, ("phone", "chair"))]),
    "hard_office": ("hard", [(7, ("laptop",)), (6, ("cup", "book")), (7, ("chair",)), (7, ("dish",))]),
    "hard_evening": ("hard", [(6, ("phone",)), (7, ("table", "laptop")), (7, ("cup", "dish")), (7, ("book", "phone", "chair"))]),
    "mid_desk": ("mid", [(7, ("phone", "laptop")), (7, ("phone", "table")), (7, ("table",)), (7, ("table", "cup"))]),
    "mid_reading": ("mid", [(7, ("laptop", "dish")), (7, ("laptop", "chair")), (7, ("chair", "book")), (6, ("book", "dish"))]),
    "none_call": ("none", [(27, ("cup", "phone"))]),
    "none_study": ("none", [(27, ("chair", "table"))]),
    "none_meal": ("none", [(27, ("laptop", "cup", "table"))]),
}


def _scripted_relations(objects, vocab, rng):
    rels = []
    kinds = np.array(vocab.predicate_kinds)
    for o in objects:
        for kind in KINDS:
            options = np.flatnonzero(kinds == kind)
            if len(options):
                rels.append((o, int(rng.choice(options)), 1.0))
    return rels


def library_script(name, vocab=None, **kw):
    vocab = vocab or default_vocabulary()
    _, phases = SCRIPT_LIBRARY[name]
    # deterministic relations per script, independent of the video seed
    rng = np.random.default_rng(sum(map(ord, name)))
    out = []
    for dur, objs in phases:
        ids = tuple(vocab.object_index(o) for o in objs)
        out.append(Phase(dur, ids, _scripted_relations(ids, vocab, rng)))
    return ActivityScript(out, vocab, name=name, **kw)


# ---- random scripts ----

def _switch(prev, kind, pool, rng):
    prev = list(prev)
    others = [o for o in pool if o not in prev]
    if kind == "mid":
        moves = []
        if len(prev) >= 2 and others:
            moves.append("replace_one")
        if len(prev) == 1 and others:
            moves.append("add_one")
        if len(prev) == 2:
            moves.append("drop_one")
        move = moves[rng.integers(len(moves))]
        if move == "replace_one":
            keep = list(rng.choice(prev, size=len(prev) - 1, replace=False))
            return tuple(keep + [int(rng.choice(others))])
        if move == "add_one":
            return tuple(prev + [int(rng.choice(others))])
        return tuple(rng.choice(prev, size=1))
    # hard: replace everything
    size = int(rng.integers(1, 3))
    return tuple(int(o) for o in rng.choice(others, size=min(size, len(others)), replace=False))


def random_script(kind, length, rng, vocab=None, **kw):
    vocab = vocab or default_vocabulary()
    pool = list(range(1, vocab.n_objects))
    objs = tuple(int(o) for o in rng.choice(pool, size=int(rng.integers(1, 3)), replace=False))
    durations = [length]
    if kind != "none":
        durations = []
        while sum(durations) < length:
            durations.append(int(rng.integers(4, 10)))
        durations[-1] -= sum(durations) - length
        if durations[-1] < 1:
            durations.pop()
            durations[-1] += length - sum(durations)
    phases = []
    for k, dur in enumerate(durations):
        if k > 0:
            objs = _switch(objs, kind, pool, rng)
        rels = []
        for o in objs:
            for kk in KINDS:
                options = [p for p in range(vocab.n_predicates) if vocab.kind_of(p) == kk]
                p = int(rng.choice(options))
                rels.append((o, p, 1.0 if kk != "contacting" else 0.7))
        phases.append(Phase(dur, objs, rels))
    return ActivityScript(phases, vocab, name=f"random_{kind}", **kw)


def _allocate(n, mix):
    kinds = [k for k in ("none", "mid", "hard") if mix.get(k, 0) > 0]
    if not kinds:
        raise ValueError("difficulty mix has no positive weight")
    total = sum(mix[k] for k in kinds)
    exact = {k: n * mix[k] / total for k in kinds}
    counts = {k: int(np.floor(v)) for k, v in exact.items()}
    rest = n - sum(counts.values())
    for k in sorted(kinds, key=lambda k: (-(exact[k] - counts[k]), kinds.index(k)))[:rest]:
        counts[k] += 1
    return counts


def generate_corpus(n_videos, mix, seed, scripted=False, length=(20, 30), vocab=None,
                    feature_std=0.3, box_jitter=0.01, d_vis=64, world_seed=0):
    """Return (sequences, manifest rows).

    mix maps "none" / "mid" / "hard" to relative weights. Scripted corpora draw
    from SCRIPT_LIBRARY with a random 0-2 frame crop at the start; otherwise each
    video gets a fresh random script whose every switch is of the requested kind.
    """
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    vocab = vocab or default_vocabulary()
    rng = np.random.default_rng(seed)
    counts = _allocate(n_videos, mix)
    kinds = [k for k in ("none", "mid", "hard") for _ in range(counts.get(k, 0))]
    rng.shuffle(kinds)
    style = dict(feature_std=feature_std, box_jitter=box_jitter, d_vis=d_vis, world_seed=world_seed)
    sequences, manifest = [], []
    for i, kind in enumerate(kinds):
        vid = f"v{i:04d}"
        if scripted:
            names = sorted(n for n, (k, _) in SCRIPT_LIBRARY.items() if k == kind)
            name = names[int(rng.integers(len(names)))]
            script = library_script(name, vocab, **style)
            crop = int(rng.integers(0, 3))
            if crop:
                first = script.phases[0]
                phases = (Phase(first.duration - crop, first.objects, first.relations),) + script.phases[1:]
                script = ActivityScript(phases, vocab, name=name, **style)
        else:
            n = int(rng.integers(length[0], length[1] + 1))
            script = random_script(kind, n, rng, vocab, **style)
        video_seed = int(rng.integers(2**31))
        seq = generate(script, video_seed, vid)
        sequences.append(seq)
        manifest.append(manifest_row(vid, kind, script, video_seed))
    return sequences, manifest


def manifest_row(video_id, kind, script, video_seed):
    vocab = script.vocab
    phases, start = [], 0
    for ph in script.phases:
        phases.append({
            "start": start,
            "end": start + ph.duration - 1,
            "objects": [vocab.object_categories[o] for o in (PERSON,) + ph.objects],
        })
        start += ph.duration
    bounds = [
        {"F_s": t, "j_dist": float(d), "j_dist_exact": f"{d.numerator}/{d.denominator}", "tier": tier_of(float(d))}
        for t, d in phase_boundaries(script)
    ]
    return {
        "video_id": video_id,
        "kind": kind,
        "script": script.name,
        "seed": video_seed,
        "length": script.length,
        "phases": phases,
        "boundaries": bounds,
    }
