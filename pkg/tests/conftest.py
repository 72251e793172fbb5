import numpy as np
import pytest
import torch

from forescene.decoder import DecoderConfig
from forescene.encoder import EncoderConfig
from forescene.features import FeatureConfig
from forescene.gae import GAEConfig
from forescene.graph import default_vocabulary
from forescene.synth import generate, random_script

torch.set_num_threads(1)

D_VIS = 8


def tiny_gae_config(C=8, N=5, gcn_layers=2):
    return GAEConfig(
        FeatureConfig(d_vis=D_VIS, d_box_proj=4, d_sem=4, d_node=12, d_edge=20, d_union=4),
        EncoderConfig(gcn_layers=gcn_layers, C=C),
        DecoderConfig(L=2, heads=2, d_head=4, N=N),
    )


def synthetic_graphs(n, seed=0, kind="hard", length=12):
    rng = np.random.default_rng(seed)
    out = []
    k = 0
    while len(out) < n:
        script = random_script(kind, length, rng, default_vocabulary(), d_vis=D_VIS)
        out.extend(generate(script, seed * 1000 + k).graphs)
        k += 1
    return out[:n]


def fd_check(loss_fn, params, n_coords=40, eps=1e-6, seed=0):
    """Central finite differences on random coordinates of params against autograd.

    Returns ||fd - ad|| / ||ad|| over the sampled coordinates (double precision).
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    picks = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    fd, ad = [], []
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[k])
            view = params[k].view(-1)
            old = view[idx].item()
            view[idx] = old + eps
            up = loss_fn().item()
            view[idx] = old - eps
            down = loss_fn().item()
            view[idx] = old
            fd.append((up - down) / (2 * eps))
            ad.append(grads[k].view(-1)[idx].item())
    fd, ad = np.array(fd), np.array(ad)
    denom = max(np.linalg.norm(ad), 1e-12)
    return float(np.linalg.norm(fd - ad) / denom)


@pytest.fixture
def vocab():
    return default_vocabulary()
