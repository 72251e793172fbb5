"""On-disk formats: frame records, binary feature sidecar, splits, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .graph import Edge, GraphSequence, Node, SceneGraph, Vocabulary

FEATURE_MAGIC = b"FSFEAT01"
RECORDS_NAME = "records.jsonl"
FEATURES_NAME = "features.bin"
VOCAB_NAME = "vocab.json"


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_jsonl(rows):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def write_jsonl(path, rows):
    atomic_write_text(path, dumps_jsonl(rows))


def read_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hashes(root):
    """sha256 of every regular file under root, keyed by relative path."""
    root = Path(root)
    return {
        str(p.relative_to(root)): file_hash(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and not p.name.startswith(".")
    }


# ---- feature sidecar ----

def encode_features(index, matrix):
    """Serialize float32 rows with an index header of (video_id, frame_index, node ordinal, row)."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    header = json.dumps({"dim": int(matrix.shape[1]), "rows": int(matrix.shape[0]), "index": index}).encode()
    return FEATURE_MAGIC + struct.pack("<Q", len(header)) + header + matrix.tobytes()


def decode_features(data):
    if data[:8] != FEATURE_MAGIC:
        raise ValueError("not a feature file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen])
    mat = np.frombuffer(data, dtype="<f4", offset=16 + hlen, count=header["rows"] * header["dim"])
    return header, mat.reshape(header["rows"], header["dim"]).astype(np.float32)


# ---- frame records ----

def graph_to_record(video_id, g, vocab, feature_rows=None):
    nodes = []
    for k, n in enumerate(g.nodes):
        rec = {"category": vocab.object_categories[n.category], "box": list(n.box)}
        if feature_rows is not None and n.feature is not None:
            rec["feature_row"] = feature_rows[k]
        elif n.feature is not None:
            rec["feature"] = [float(v) for v in n.feature]
        nodes.append(rec)
    edges = [
        {
            "subject": e.subject,
            "object": e.object,
            "predicates": [vocab.predicate_categories[p] for p in sorted(e.predicates)],
        }
        for e in g.edges
    ]
    return {"video_id": video_id, "frame_index": g.frame_index, "nodes": nodes, "edges": edges}


def record_to_graph(rec, vocab, features=None):
    nodes = []
    for n in rec["nodes"]:
        if "feature_row" in n:
            feat = features[n["feature_row"]]
        else:
            feat = n.get("feature")
        nodes.append(Node(vocab.object_index(n["category"]), n["box"], feat))
    edges = [
        Edge(e["subject"], e["object"], [vocab.predicate_index(p) for p in e["predicates"]])
        for e in rec["edges"]
    ]
    return SceneGraph(nodes, edges, rec["frame_index"])


def records_from_sequences(sequences, vocab, sidecar=True):
    """Return (records, feature index, feature matrix or None)."""
    records, index, rows = [], [], []
    for seq in sequences:
        for g in seq.graphs:
            frows = None
            if sidecar:
                frows = []
                for k, n in enumerate(g.nodes):
                    if n.feature is None:
                        frows.append(None)
                        continue
                    frows.append(len(rows))
                    index.append([seq.video_id, g.frame_index, k, len(rows)])
                    rows.append(n.feature)
            records.append(graph_to_record(seq.video_id, g, vocab, frows))
    mat = np.stack(rows).astype(np.float32) if rows else None
    return records, index, mat


def sequences_from_records(records, vocab, features=None):
    by_video = {}
    for rec in records:
        by_video.setdefault(rec["video_id"], []).append(record_to_graph(rec, vocab, features))
    out = []
    for vid, graphs in by_video.items():
        graphs.sort(key=lambda g: g.frame_index)
        out.append(GraphSequence(vid, graphs))
    return out


def write_corpus(directory, sequences, vocab, sidecar=True):
    directory = Path(directory)
    records, index, mat = records_from_sequences(sequences, vocab, sidecar)
    if mat is not None:
        atomic_write_bytes(directory / FEATURES_NAME, encode_features(index, mat))
    write_jsonl(directory / RECORDS_NAME, records)
    write_json(directory / VOCAB_NAME, vocab.to_dict())


def read_corpus(directory):
    directory = Path(directory)
    vocab = Vocabulary.from_dict(read_json(directory / VOCAB_NAME))
    features = None
    fpath = directory / FEATURES_NAME
    if fpath.exists():
        _, features = decode_features(fpath.read_bytes())
    records = read_jsonl(directory / RECORDS_NAME)
    return vocab, sequences_from_records(records, vocab, features)


# ---- splits ----

def write_splits(path, splits):
    write_jsonl(path, [s.to_record() for s in splits])


def read_splits(path):
    from .benchmark import AnticipationSplit

    return [AnticipationSplit.from_record(r) for r in read_jsonl(path)]
