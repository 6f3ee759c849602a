"""Figures rendered next to the CSV reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import IMAGE_SIDE, ring8_centers  # noqa: E402

# fixed metadata so reruns produce the same bytes
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def fig2_curves(rows, path) -> Path:
    """Critic score curves over the 1D grid, one panel per loss."""
    a = np.asarray(rows, dtype=float)
    x = a[:, 0]
    titles = ("GAN (sigmoid)", "WGAN-GP", "LSGAN", "margin")
    fig, axes = plt.subplots(1, 4, figsize=(13, 3))
    for k, (ax, title) in enumerate(zip(axes, titles)):
        ax.plot(x, a[:, k + 1], color="k", lw=1.2)
        for mu, c in ((-2.0, "tab:red"), (2.0, "tab:blue")):
            ax.axvline(mu, color=c, ls=":", lw=0.8)
        ax.set_title(title)
        ax.set_xlabel("x")
    axes[0].set_ylabel("D(x)")
    return _save(fig, path)


def stage_scores(history, path, margins=None) -> Path:
    """Per-epoch mean critic scores across all stages."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = np.arange(1, len(history) + 1)
    ax.plot(t, [r.mean_d_real for r in history], label="D(x)")
    ax.plot(t, [r.mean_d_fake_i for r in history], label="D(G_i(z))")
    ax.plot(t, [r.mean_d_fake_prev for r in history], label="D(G_i-1(z))")
    start = 0
    stages = [r.stage for r in history]
    for s in sorted(set(stages)):
        n = stages.count(s)
        ax.axvline(start + 0.5, color="0.7", lw=0.8)
        if margins and s in margins:
            m = margins[s]
            ax.hlines([m.m_high, m.m_low], start + 1, start + n, colors="0.4", linestyles="--", lw=0.8)
        start += n
    ax.set_xlabel("epoch (all stages)")
    ax.set_ylabel("mean score")
    ax.legend(fontsize=8, loc="best")
    return _save(fig, path)


def samples_2d(real, generated: dict, path) -> Path:
    """Scatter of held-out data against each stage's samples."""
    n = len(generated)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    centers = ring8_centers()
    for ax, (label, g) in zip(axes[0], generated.items()):
        ax.scatter(real[:, 0], real[:, 1], s=3, c="0.75", label="data")
        ax.scatter(g[:, 0], g[:, 1], s=3, c="tab:blue", label="generated")
        ax.scatter(centers[:, 0], centers[:, 1], marker="x", c="k", s=12)
        ax.set_title(label)
        ax.set_aspect("equal")
        ax.set_xlim(-1.6, 1.6)
        ax.set_ylim(-1.6, 1.6)
    return _save(fig, path)


def image_grid(rows: dict, path, side: int = IMAGE_SIDE, max_cols: int = 10) -> Path:
    """One row of small images per label, e.g. original / corrupted / completed."""
    labels = list(rows)
    ncol = min(max_cols, min(len(v) for v in rows.values()))
    fig, axes = plt.subplots(len(labels), ncol, figsize=(ncol * 0.9, len(labels) * 1.0), squeeze=False)
    for r, label in enumerate(labels):
        for c in range(ncol):
            ax = axes[r][c]
            ax.imshow(np.asarray(rows[label][c]).reshape(side, side), cmap="gray", vmin=-1, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
        axes[r][0].set_ylabel(label, fontsize=7)
    return _save(fig, path)


def completion_trajectory(trajectory, path) -> Path:
    it, loss = zip(*trajectory)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(it, loss, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean completion loss")
    return _save(fig, path)
