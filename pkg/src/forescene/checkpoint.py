"""Checkpoint files: model weights grouped into named parameter blocks plus the config they need.

Layout (a torch.save dict, loaded with weights_only=True):
    format        CHECKPOINT_FORMAT
    kind          "gae" or "ldm"
    config        plain dict needed to rebuild the module
    vocab         vocabulary dict (gae only)
    blocks        {block name: {param name: tensor}}  block = first dotted component
    shapes        {full param name: list}
    fingerprint   sha256 over config + parameter bytes
    train         {"epoch" | "iteration": int, "history": [...], "optimizer": state_dict}
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

import torch

from .diffusion import DenoiserConfig, DiffusionConfig, LatentDiffusion
from .gae import GAEConfig, GraphAutoEncoder
from .graph import Vocabulary
from .io import atomic_write_bytes

CHECKPOINT_FORMAT = 1


class CheckpointError(ValueError):
    pass


def split_blocks(state):
    blocks = {}
    for name, t in state.items():
        head, _, rest = name.partition(".")
        blocks.setdefault(head, {})[rest or head] = t.detach().cpu().clone()
    return blocks


def join_blocks(blocks):
    state = {}
    for head, params in blocks.items():
        for rest, t in params.items():
            state[head if rest == head else f"{head}.{rest}"] = t
    return state


def fingerprint(config, state):
    h = hashlib.sha256(json.dumps(config, sort_keys=True).encode())
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def _payload(kind, config, module, vocab=None, train=None):
    state = module.state_dict()
    return {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "config": config,
        "vocab": vocab,
        "blocks": split_blocks(state),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "fingerprint": fingerprint(config, state),
        "train": train or {},
    }


def _write(path, payload):
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(path, buf.getvalue())
    return payload["fingerprint"]


def save_gae(path, model, train=None):
    return _write(path, _payload("gae", model.cfg.to_dict(), model, model.vocab.to_dict(), train))


def ldm_config(model):
    return {"C": model.C, "diffusion": asdict(model.diff_cfg), "denoiser": asdict(model.den_cfg)}


def save_ldm(path, model, train=None, gae_fingerprint=None):
    cfg = ldm_config(model)
    cfg["gae_fingerprint"] = gae_fingerprint
    return _write(path, _payload("ldm", cfg, model, None, train))


def read_checkpoint(path, kind=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    if kind is not None and payload.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {payload.get('kind')!r}")
    return payload


def _restore(module, payload, path):
    state = join_blocks(payload["blocks"])
    expected = module.state_dict()
    missing = sorted(set(expected) - set(state))
    extra = sorted(set(state) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter mismatch (missing {missing[:5]}, unexpected {extra[:5]})")
    for k, v in state.items():
        if tuple(v.shape) != tuple(expected[k].shape):
            raise CheckpointError(f"{path}: {k} has shape {tuple(v.shape)}, model wants {tuple(expected[k].shape)}")
    module.load_state_dict(state)
    if fingerprint(payload["config"], module.state_dict()) != payload["fingerprint"]:
        raise CheckpointError(f"{path}: fingerprint mismatch (corrupted file?)")
    return module


def load_gae(path):
    payload = read_checkpoint(path, "gae")
    cfg = GAEConfig.from_dict(payload["config"])
    model = GraphAutoEncoder(cfg, Vocabulary.from_dict(payload["vocab"]))
    _restore(model, payload, path)
    model.eval()
    return model, payload


def load_ldm(path):
    payload = read_checkpoint(path, "ldm")
    c = payload["config"]
    model = LatentDiffusion(c["C"], DiffusionConfig(**c["diffusion"]), DenoiserConfig(**c["denoiser"]))
    _restore(model, payload, path)
    model.eval()
    return model, payload

