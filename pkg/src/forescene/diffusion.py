"""Conditional latent diffusion over windows of graph latents."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .gae import cosine_lr

log = logging.getLogger(__name__)

NOISED = 1
CONDITIONING = 0


@dataclass
class DiffusionConfig:
    T: int = 500
    schedule: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    S: int = 20  # window width; 0 means the whole sequence


@dataclass
class DenoiserConfig:
    dit_depth: int = 12
    dit_heads: int = 6
    dit_width: int = 384
    dit_mlp_ratio: int = 4
    adaln: bool = False


@dataclass
class LDMTrainConfig:
    ldm_iters: int = 80000
    ldm_batch: int = 32
    ldm_lr: float = 5e-4
    ldm_lr_min: float = 0.0
    ldm_grad_clip: float = 1.0
    train_mask: str = "random"  # "random" half, or "mixed" (half the time a contiguous future suffix)
    log_every: int = 50


class DiffusionSchedule:
    """Noise coefficients indexed by t = 0..T, with t = 0 the clean sample (alpha_bar[0] = 1)."""

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        self.T = len(betas)
        self.betas = np.concatenate([[0.0], betas])
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        var = np.zeros_like(self.betas)
        var[1:] = self.betas[1:] * (1.0 - prev[1:]) / (1.0 - self.alpha_bar[1:])
        self.posterior_var = var

    @classmethod
    def make(cls, T=500, kind="linear", beta_start=1e-4, beta_end=2e-2):
        if T < 1:
            raise ValueError("T must be >= 1")
        if kind == "linear":
            # endpoints are specified for 1000 steps and rescaled so alpha_bar[T] stays near zero for any T
            scale = 1000.0 / T
            betas = np.linspace(beta_start * scale, beta_end * scale, T)
        elif kind == "cosine":
            s = 0.008
            f = lambda t: np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
            ts = np.arange(T + 1)
            ab = f(ts) / f(0)
            betas = 1 - ab[1:] / ab[:-1]
        else:
            raise ValueError(f"unknown schedule {kind!r}")
        return cls(np.clip(betas, 1e-8, 0.999))

    @classmethod
    def from_config(cls, cfg):
        return cls.make(cfg.T, cfg.schedule, cfg.beta_start, cfg.beta_end)

    def coef(self, name, t, like):
        """Coefficient array at integer timesteps t, shaped to broadcast over like (B, S, C)."""
        vals = torch.as_tensor(getattr(self, name), dtype=like.dtype)[t]
        return vals.reshape(vals.shape + (1,) * (like.dim() - vals.dim()))


def forward_noise(z, t, schedule, generator=None):
    """z_t = sqrt(alpha_bar_t) z + sqrt(1 - alpha_bar_t) eps, with t broadcast over the leading dim."""
    t = torch.as_tensor(t, dtype=torch.long)
    if (t < 0).any() or (t > schedule.T).any():
        raise ValueError(f"timestep outside [0, {schedule.T}]")
    eps = torch.randn(z.shape, generator=generator, dtype=z.dtype)
    ab = schedule.coef("alpha_bar", t, z)
    return ab.sqrt() * z + (1 - ab).sqrt() * eps, eps


def sinusoidal(x, dim, max_period=10000.0):
    """Sinusoidal embedding of integer positions / timesteps; x (...,) -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = x.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class DenoiserBlock(nn.Module):
    def __init__(self, width, heads, mlp_ratio, adaln):
        super().__init__()
        self.heads, self.adaln = heads, adaln
        self.norm1 = nn.LayerNorm(width, elementwise_affine=not adaln, eps=1e-6)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=not adaln, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_ratio * width), nn.GELU(approximate="tanh"),
                                 nn.Linear(mlp_ratio * width, width))
        if adaln:
            self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(width, 6 * width))
            nn.init.zeros_(self.modulation[-1].weight)
            nn.init.zeros_(self.modulation[-1].bias)

    def attention(self, x, mask):
        B, S, W = x.shape
        q, k, v = self.qkv(x).view(B, S, 3, self.heads, W // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(B, S, W))

    def forward(self, x, c, mask):
        if not self.adaln:
            x = x + self.attention(self.norm1(x), mask)
            return x + self.mlp(self.norm2(x))
        sh1, sc1, g1, sh2, sc2, g2 = self.modulation(c).chunk(6, dim=-1)
        x = x + g1.unsqueeze(1) * self.attention(modulate(self.norm1(x), sh1, sc1), mask)
        return x + g2.unsqueeze(1) * self.mlp(modulate(self.norm2(x), sh2, sc2))


class Denoiser(nn.Module):
    """Transformer predicting the noise of every token in a window.

    Tokens carry a timestep embedding (added, or through adaptive norms when adaln is set),
    a role embedding (conditioning vs noised) and a sinusoidal encoding of their position.
    """

    def __init__(self, C, cfg):
        super().__init__()
        self.C, self.cfg = C, cfg
        W = cfg.dit_width
        self.in_proj = nn.Linear(C, W)
        self.t_mlp = nn.Sequential(nn.Linear(W, W), nn.SiLU(), nn.Linear(W, W))
        self.role = nn.Embedding(2, W)
        self.blocks = nn.ModuleList(
            DenoiserBlock(W, cfg.dit_heads, cfg.dit_mlp_ratio, cfg.adaln) for _ in range(cfg.dit_depth)
        )
        self.norm_out = nn.LayerNorm(W, elementwise_affine=not cfg.adaln, eps=1e-6)
        if cfg.adaln:
            self.final_mod = nn.Sequential(nn.SiLU(), nn.Linear(W, 2 * W))
            nn.init.zeros_(self.final_mod[-1].weight)
            nn.init.zeros_(self.final_mod[-1].bias)
        self.out_proj = nn.Linear(W, C)

    def forward(self, x, t, roles, positions, valid=None):
        W = self.cfg.dit_width
        dtype = x.dtype
        c = self.t_mlp(sinusoidal(torch.as_tensor(t).reshape(-1), W).to(dtype))
        h = self.in_proj(x) + self.role(roles) + sinusoidal(positions, W).to(dtype)
        if not self.cfg.adaln:
            h = h + c.unsqueeze(1)
        mask = None
        if valid is not None and not bool(valid.all()):
            mask = valid[:, None, None, :]
        for blk in self.blocks:
            h = blk(h, c, mask)
        h = self.norm_out(h)
        if self.cfg.adaln:
            shift, scale = self.final_mod(c).chunk(2, dim=-1)
            h = modulate(h, shift, scale)
        return self.out_proj(h)


@dataclass
class WindowBatch:
    tokens: torch.Tensor  # (B, S, C) clean latents
    noised: torch.Tensor  # (B, S) bool role flag
    positions: torch.Tensor  # (B, S) long
    t: torch.Tensor  # (B,) long
    valid: torch.Tensor  # (B, S) bool, False on padding
    eps: Optional[torch.Tensor] = None  # (B, S, C)


def loss_dm(model, batch, schedule):
    """Mean over noised, non-padded tokens of ||eps - eps_hat||^2."""
    eps = batch.eps
    ab = schedule.coef("alpha_bar", batch.t, batch.tokens)
    noisy = ab.sqrt() * batch.tokens + (1 - ab).sqrt() * eps
    x = torch.where(batch.noised.unsqueeze(-1), noisy, batch.tokens)
    pred = model(x, batch.t, batch.noised.long(), batch.positions, batch.valid)
    m = (batch.noised & batch.valid).unsqueeze(-1).to(x.dtype)
    return (((pred - eps) ** 2) * m).sum() / m.sum().clamp(min=1)


@torch.no_grad()
def reverse_diffuse(model, tokens, noised, positions, schedule, generators, valid=None, init=None):
    """Ancestral sampling from t = T down to 1, rewriting only noised positions.

    generators: one torch.Generator per batch row; each row draws exactly as many normals
    as it has noised tokens per step, so a row's result does not depend on its batch mates.
    init: optional starting noise for the noised tokens (defaults to fresh draws).
    Conditioning tokens are copied back unchanged after every step.
    """
    B, S, C = tokens.shape
    if valid is None:
        valid = torch.ones((B, S), dtype=torch.bool)
    sel = noised & valid
    counts = sel.sum(1).tolist()

    def draw():
        out = torch.zeros_like(tokens)
        for b in range(B):
            if counts[b]:
                out[b, sel[b]] = torch.randn((counts[b], C), generator=generators[b], dtype=tokens.dtype)
        return out

    x = torch.where(sel.unsqueeze(-1), init if init is not None else draw(), tokens)
    roles = noised.long()
    for t in range(schedule.T, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        eps = model(x, tt, roles, positions, valid)
        a, ab, beta = schedule.alphas[t], schedule.alpha_bar[t], schedule.betas[t]
        mean = (x - (beta / math.sqrt(1 - ab)) * eps) / math.sqrt(a)
        if t > 1:
            mean = mean + math.sqrt(schedule.posterior_var[t]) * draw()
        x = torch.where(sel.unsqueeze(-1), mean, tokens)
    return x


class LatentDiffusion(nn.Module):
    """Denoiser plus the latent standardization it was trained under."""

    def __init__(self, C, diff_cfg=None, den_cfg=None):
        super().__init__()
        self.diff_cfg = diff_cfg or DiffusionConfig()
        self.den_cfg = den_cfg or DenoiserConfig()
        self.C = C
        self.denoiser = Denoiser(C, self.den_cfg)
        self.schedule = DiffusionSchedule.from_config(self.diff_cfg)
        self.register_buffer("latent_mean", torch.zeros(C))
        self.register_buffer("latent_std", torch.ones(C))
        self.register_buffer("whole_len", torch.zeros((), dtype=torch.long))

    def fit_normalizer(self, sequences):
        allz = torch.cat(list(sequences))
        self.latent_mean.copy_(allz.mean(0))
        self.latent_std.copy_(allz.std(0).clamp(min=1e-4))

    def normalize(self, z):
        return (z - self.latent_mean.to(z.dtype)) / self.latent_std.to(z.dtype)

    def denormalize(self, z):
        return z * self.latent_std.to(z.dtype) + self.latent_mean.to(z.dtype)

    @property
    def window(self):
        """Effective window width (whole-sequence mode uses the longest training sequence)."""
        return self.diff_cfg.S if self.diff_cfg.S > 0 else int(self.whole_len)


def sample_windows(sequences, S, batch, train_mask, rng, dtype=torch.float32):
    """Random training windows. Short sequences are padded by repeating their last latent."""
    C = sequences[0].shape[1]
    tokens = torch.zeros((batch, S, C), dtype=dtype)
    valid = torch.zeros((batch, S), dtype=torch.bool)
    noised = torch.zeros((batch, S), dtype=torch.bool)
    for b in range(batch):
        seq = sequences[rng.integers(len(sequences))]
        n = seq.shape[0]
        if n >= S:
            start = int(rng.integers(n - S + 1))
            tokens[b] = seq[start : start + S]
            n_valid = S
        else:
            tokens[b, :n] = seq
            tokens[b, n:] = seq[-1]
            n_valid = n
        valid[b, :n_valid] = True
        if train_mask == "mixed" and rng.random() < 0.5 and n_valid > 1:
            k = int(rng.integers(1, n_valid))
            noised[b, k:n_valid] = True
        elif train_mask in ("random", "mixed"):
            noised[b, rng.choice(S, size=S // 2, replace=False)] = True
        else:
            raise ValueError(f"unknown train_mask {train_mask!r}")
    positions = torch.arange(S).expand(batch, S)
    return tokens, noised, positions, valid


def train_ldm(latent_sequences, C, diff_cfg=None, den_cfg=None, train=None, seed=0, model=None,
              optimizer_state=None, start_iter=0, history=None, on_log=None):
    """Fit the denoiser on sequences of (frozen) graph latents.

    latent_sequences: list of (L_i, C) tensors in raw latent units; they are standardized
    with statistics stored in the model. Returns (model, optimizer, history rows).
    on_log(iteration, model, optimizer, history) runs after every logged row.
    """
    train = train or LDMTrainConfig()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed + start_iter)
    if model is None:
        model = LatentDiffusion(C, diff_cfg, den_cfg)
        model.fit_normalizer(latent_sequences)
        model.whole_len.fill_(max(s.shape[0] for s in latent_sequences))
    seqs = [model.normalize(s).detach() for s in latent_sequences]
    S = model.window
    schedule = model.schedule
    opt = torch.optim.AdamW(model.denoiser.parameters(), lr=train.ldm_lr, weight_decay=0.0)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    gen = torch.Generator().manual_seed(seed + start_iter)
    history = list(history or [])
    running, seen = 0.0, 0
    for it in range(start_iter + 1, train.ldm_iters + 1):
        model.train()
        for group in opt.param_groups:
            group["lr"] = cosine_lr(train.ldm_lr, it - 1, train.ldm_iters, train.ldm_lr_min)
        tokens, noised, positions, valid = sample_windows(seqs, S, train.ldm_batch, train.train_mask, rng)
        t = torch.from_numpy(rng.integers(1, schedule.T + 1, size=train.ldm_batch))
        eps = torch.randn(tokens.shape, generator=gen)
        loss = loss_dm(model.denoiser, WindowBatch(tokens, noised, positions, t, valid, eps), schedule)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite diffusion loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        if train.ldm_grad_clip > 0:
            nn.utils.clip_grad_norm_(model.denoiser.parameters(), train.ldm_grad_clip)
        opt.step()
        running += loss.item()
        seen += 1
        if it % train.log_every == 0 or it == train.ldm_iters:
            history.append({"iteration": it, "loss": running / seen})
            running, seen = 0.0, 0
            if on_log is not None:
                on_log(it, model, opt, history)
    return model, opt, history


def ldm_curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "loss"))
    for r in rows:
        w.writerow((r["iteration"], repr(float(r["loss"]))))
    return buf.getvalue()


@torch.no_grad()
def heldout_mse(model, latent_sequences, n_windows=64, seed=1234):
    """Diffusion loss on fixed random windows from held-out sequences (lower is better)."""
    model.eval()
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    seqs = [model.normalize(s) for s in latent_sequences]
    tokens, noised, positions, valid = sample_windows(seqs, model.window, n_windows, "random", rng)
    t = torch.from_numpy(rng.integers(1, model.schedule.T + 1, size=n_windows))
    eps = torch.randn(tokens.shape, generator=gen)
    return float(loss_dm(model.denoiser, WindowBatch(tokens, noised, positions, t, valid, eps), model.schedule))
