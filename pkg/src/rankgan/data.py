"""Seedable synthetic datasets, splits and occlusion masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("gauss1d-pair", "gauss2d", "ring8", "toy-faces")
MASK_KINDS = ("center-small", "center-large", "periocular-small", "periocular-large")

IMAGE_SIDE = 8
RING_SIGMA = 0.05
GAUSS1D_MEANS = (-2.0, 2.0)
GAUSS1D_STD = 0.5
GAUSS2D_CENTERS = ((-1.0, 0.0), (1.0, 0.0))
GAUSS2D_STD = 0.1


def ring8_centers() -> np.ndarray:
    angles = 2 * np.pi * np.arange(8) / 8
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def data_dim(kind: str) -> int:
    return {"gauss1d-pair": 1, "gauss2d": 2, "ring8": 2, "toy-faces": IMAGE_SIDE * IMAGE_SIDE}[_check(kind)]


def _check(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    return kind


def _toy_faces(n: int, rng: np.random.Generator) -> np.ndarray:
    imgs = np.full((n, IMAGE_SIDE, IMAGE_SIDE), -1.0)
    for k in range(n):
        img = imgs[k]
        img[1:7, 1:7] = -0.6  # face plate
        dy = rng.integers(-1, 2)
        eye_row = 2 + min(dy, 0)
        left = 2 + rng.integers(-1, 2)
        right = 5 + rng.integers(-1, 2)
        img[eye_row, left] = 2 * rng.uniform(0.5, 1.0) - 1
        img[eye_row, right] = 2 * rng.uniform(0.5, 1.0) - 1
        mouth_row = 5 + max(dy, 0)
        lo = 2 + rng.integers(0, 2)
        hi = 5 + rng.integers(0, 2)
        img[mouth_row, lo:hi + 1] = 2 * rng.uniform(0.5, 1.0) - 1
    return imgs.reshape(n, -1)


def sample_real(kind: str, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` samples as an ``(n, dim)`` float64 array.

    ``gauss1d-pair`` returns labeled halves: the first ``n // 2`` rows come
    from the left normal, the rest from the right one.
    """
    _check(kind)
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "gauss1d-pair":
        half = n // 2
        left = rng.normal(GAUSS1D_MEANS[0], GAUSS1D_STD, size=half)
        right = rng.normal(GAUSS1D_MEANS[1], GAUSS1D_STD, size=n - half)
        return np.concatenate([left, right]).reshape(n, 1)
    if kind == "gauss2d":
        centers = np.asarray(GAUSS2D_CENTERS)[rng.integers(0, 2, size=n)]
        return centers + rng.normal(0.0, GAUSS2D_STD, size=(n, 2))
    if kind == "ring8":
        centers = ring8_centers()[rng.integers(0, 8, size=n)]
        return centers + rng.normal(0.0, RING_SIGMA, size=(n, 2))
    return _toy_faces(n, rng)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split(n: int, seed: int, train_fraction: float = 0.9, val_fraction: float = 0.1) -> Split:
    """Permute 0..n-1 into train / validation / test.

    ``train_fraction`` of the data is kept for training, then
    ``val_fraction`` of that training part is carved off as validation.
    """
    perm = np.random.default_rng(seed).permutation(n)
    n_train_full = int(round(train_fraction * n))
    n_val = int(round(val_fraction * n_train_full))
    n_train = n_train_full - n_val
    return Split(perm[:n_train], perm[n_train:n_train_full], perm[n_train_full:])


@dataclass
class Dataset:
    kind: str
    samples: np.ndarray
    splits: Split

    @property
    def train(self) -> np.ndarray:
        return self.samples[self.splits.train]

    @property
    def val(self) -> np.ndarray:
        return self.samples[self.splits.val]

    @property
    def test(self) -> np.ndarray:
        return self.samples[self.splits.test]


def make_dataset(kind: str, n: int, seed: int) -> Dataset:
    ss = np.random.SeedSequence(seed)
    sample_seed, split_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    return Dataset(kind, sample_real(kind, n, sample_seed), split(n, split_seed))


def save_dataset(path, ds: Dataset) -> None:
    from .checkpoint import encode

    records = [
        ("samples", ds.samples),
        ("train", ds.splits.train.astype(np.float64)),
        ("val", ds.splits.val.astype(np.float64)),
        ("test", ds.splits.test.astype(np.float64)),
    ]
    with open(path, "wb") as fh:
        fh.write(encode("dataset", {"kind": ds.kind}, records))


def load_dataset(path) -> Dataset:
    from pathlib import Path

    from .checkpoint import CheckpointError, decode

    kind, header, records = decode(Path(path).read_bytes(), str(path))
    if kind != "dataset":
        raise CheckpointError(f"{path}: expected a dataset file, found {kind!r}")
    r = dict(records)
    idx = {k: r[k].astype(np.int64) for k in ("train", "val", "test")}
    return Dataset(header["kind"], r["samples"], Split(**idx))


def make_mask(kind: str, side: int = IMAGE_SIDE) -> np.ndarray:
    """Binary visibility grid (1 = visible), flattened to ``side * side``."""
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    m = np.ones((side, side))
    c = side // 2
    if kind == "center-small":
        m[c - 1:c + 1, c - 1:c + 1] = 0
    elif kind == "center-large":
        m[c - 2:c + 2, c - 2:c + 2] = 0
    elif kind == "periocular-small":
        m[:] = 0
        m[1:3, :] = 1
    else:
        m[:] = 0
        m[0:4, :] = 1
    return m.reshape(-1)


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if mask.all() or not mask.any():
        raise ValueError("mask needs at least one visible and one hidden pixel")
    return mask


def apply_mask(image: np.ndarray, mask: np.ndarray, fill: float = 0.0) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    return np.where(mask == 1, image, fill)
