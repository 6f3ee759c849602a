"""Empirical Wasserstein distances, PSNR, SSIM and critic score statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 2.0


@dataclass
class MetricReport:
    name: str
    value: float
    n_a: int
    n_b: int
    seed: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite: {self.value}")


def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two 1D empirical distributions.

    Equal sizes use sorted matching; unequal sizes integrate the absolute
    difference of the two empirical CDFs.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1_1d needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.sort(np.concatenate([a, b]))
    deltas = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def random_directions(dim: int, n_proj: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).normal(size=(n_proj, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_wasserstein(a, b, n_proj: int = 256, seed: int = 0) -> float:
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    dirs = random_directions(a.shape[1], n_proj, seed)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([wasserstein1_1d(pa[:, k], pb[:, k]) for k in range(n_proj)]))


def mode_coverage(samples, centers, radius: float) -> float:
    """Fraction of ``centers`` with at least one sample within ``radius``."""
    samples = np.asarray(samples, dtype=np.float64)
    d = np.linalg.norm(samples[:, None, :] - np.asarray(centers)[None, :, :], axis=2)
    return float(np.mean((d <= radius).any(axis=0)))


def psnr(ref, test, max_val: float = DATA_RANGE) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"psnr: shapes {ref.shape} and {test.shape} differ")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(max_val**2 / mse)))


def ssim(ref, test, data_range: float = DATA_RANGE) -> float:
    """Single-scale SSIM with one window covering the whole image."""
    x = np.asarray(ref, dtype=np.float64).ravel()
    y = np.asarray(test, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"ssim: shapes {np.shape(ref)} and {np.shape(test)} differ")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = np.mean((x - mx) * (y - my))
    return float(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))


def score_stats(critic, samples) -> tuple[float, float]:
    """Mean and population std of critic scores over ``samples``."""
    with ad.no_grad():
        s = critic(ad.constant(np.asarray(samples, dtype=np.float64))).value.ravel()
    return float(s.mean()), float(s.std())
