import pytest
import torch

from conftest import synthetic_graphs, tiny_gae_config
from forescene.checkpoint import (
    CheckpointError,
    join_blocks,
    load_gae,
    load_ldm,
    read_checkpoint,
    save_gae,
    save_ldm,
    split_blocks,
)
from forescene.diffusion import DenoiserConfig, DiffusionConfig, LatentDiffusion
from forescene.gae import GraphAutoEncoder

TINY = DenoiserConfig(dit_depth=1, dit_heads=2, dit_width=16, dit_mlp_ratio=2)


def test_blocks_roundtrip():
    torch.manual_seed(0)
    state = LatentDiffusion(8, DiffusionConfig(T=5), TINY).state_dict()
    back = join_blocks(split_blocks(state))
    assert back.keys() == state.keys()
    assert all(torch.equal(back[k], state[k]) for k in state)


def test_gae_roundtrip_identical_outputs(tmp_path, vocab):
    torch.manual_seed(0)
    model = GraphAutoEncoder(tiny_gae_config(), vocab)
    fp = save_gae(tmp_path / "gae.pt", model, {"epoch": 3})
    back, payload = load_gae(tmp_path / "gae.pt")
    assert payload["fingerprint"] == fp and payload["train"] == {"epoch": 3}
    graphs = synthetic_graphs(4)
    model.eval()
    assert torch.equal(model.encode_graphs(graphs), back.encode_graphs(graphs))


def test_ldm_roundtrip_and_kind_check(tmp_path):
    torch.manual_seed(0)
    model = LatentDiffusion(8, DiffusionConfig(T=5, S=4), TINY)
    model.latent_mean.fill_(0.5)
    save_ldm(tmp_path / "ldm.pt", model, gae_fingerprint="abc")
    back, payload = load_ldm(tmp_path / "ldm.pt")
    assert payload["config"]["gae_fingerprint"] == "abc"
    assert back.diff_cfg == model.diff_cfg and back.den_cfg == model.den_cfg
    assert torch.equal(back.latent_mean, model.latent_mean)
    with pytest.raises(CheckpointError, match="expected a gae"):
        load_gae(tmp_path / "ldm.pt")


def test_corruption_and_missing_detected(tmp_path, vocab):
    torch.manual_seed(0)
    save_gae(tmp_path / "gae.pt", GraphAutoEncoder(tiny_gae_config(), vocab))
    payload = read_checkpoint(tmp_path / "gae.pt")
    block = next(iter(payload["blocks"].values()))
    t = next(iter(block.values()))
    t.view(-1)[0] += 1.0
    torch.save(payload, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_gae(tmp_path / "bad.pt")
    payload["format"] = 99
    torch.save(payload, tmp_path / "old.pt")
    with pytest.raises(CheckpointError, match="format"):
        load_gae(tmp_path / "old.pt")
    with pytest.raises(FileNotFoundError):
        load_gae(tmp_path / "absent.pt")


def test_shape_mismatch_detected(tmp_path, vocab):
    torch.manual_seed(0)
    save_gae(tmp_path / "gae.pt", GraphAutoEncoder(tiny_gae_config(), vocab))
    payload = read_checkpoint(tmp_path / "gae.pt")
    payload["config"] = GraphAutoEncoder(tiny_gae_config(C=6), vocab).cfg.to_dict()
    torch.save(payload, tmp_path / "shape.pt")
    with pytest.raises(CheckpointError, match="shape"):
        load_gae(tmp_path / "shape.pt")
