"""Static figure emission (PNG files); no interactive backends."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write_bytes  # noqa: E402


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return path


def plot_difficulty_cdf(stats, path, title="Split difficulty"):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.step(stats["cdf_x"], stats["cdf_y"], where="post")
    for x in (0.33, 0.66):
        ax.axvline(x, color="grey", lw=0.8, ls="--")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("J_dist at split")
    ax.set_ylabel("cumulative fraction")
    ax.set_title(f"{title} (MID {stats['counts'].get('MID', 0)}, HARD {stats['counts'].get('HARD', 0)})")
    return _save(fig, path)


def plot_observed_fraction(stats, path, title="Observed fraction at split"):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    hist = stats["observed_hist"]
    if hist:
        edges = hist["edges"]
        width = (edges[1] - edges[0]) / 2
        for k, tier in enumerate(("MID", "HARD")):
            ax.bar(edges[:-1] + k * width, hist[tier], width=width, align="edge", label=tier,
                   edgecolor="black", lw=0.5)
        ax.legend(fontsize=7)
    ax.set_xlim(0, 1)
    ax.set_xlabel("(F_s + 1) / video length")
    ax.set_ylabel("splits")
    ax.set_title(title)
    return _save(fig, path)


def plot_metric_vs_r(agg, setting, metric, K, regime, path):
    """One line per method: metric value against r, from evaluation.aggregate() output."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    series = {}
    for (s, method, r, sel, m, k, reg), v in agg.items():
        if s == setting and m == metric and k == K and reg == regime:
            series.setdefault((method, sel), []).append((r, v))
    for (method, sel), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o", label=f"{method} ({sel})")
    ax.set_xlabel("r")
    ax.set_ylabel(f"{metric}{'@' + str(K) if K else ''} {regime}".strip() + " (%)")
    ax.set_title(setting or "all")
    if series:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_curve(rows, x, ys, path, title=""):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for y in ys:
        ax.plot([r[x] for r in rows], [r[y] for r in rows], label=y)
    ax.set_xlabel(x)
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _save(fig, path)
