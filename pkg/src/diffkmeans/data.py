"""Datasets: seeded Gaussian blobs, CIFAR-10 binary batches, splits and CSV export."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CIFAR_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
BACKGROUND = -1


class CifarFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SampleBatch:
    """What the trainer is allowed to see: features and fg/bg flags only."""

    features: np.ndarray  # (N, D)
    fg_flags: np.ndarray  # (N,) in {0, 1}

    def __post_init__(self):
        if self.features.shape[0] != self.fg_flags.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.fg_flags.shape[0]} flags"
            )

    def __len__(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    features: np.ndarray  # (N, D) float64
    fg_flags: np.ndarray  # (N,) int64
    hidden_class: np.ndarray  # (N,) int64, evaluation only
    centers: np.ndarray | None = None  # generator's true fg centres, if known

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.fg_flags = np.asarray(self.fg_flags, dtype=np.int64)
        self.hidden_class = np.asarray(self.hidden_class, dtype=np.int64)
        n = self.features.shape[0]
        if self.fg_flags.shape != (n,) or self.hidden_class.shape != (n,):
            raise ValueError("features, fg_flags and hidden_class lengths differ")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.fg_flags[idx], self.hidden_class[idx], self.centers)

    def to_batch(self) -> SampleBatch:
        return SampleBatch(self.features.copy(), self.fg_flags.copy())

    def foreground(self) -> "Dataset":
        return self.subset(self.fg_flags == 1)


def gen_blobs(
    D: int,
    n_fg_classes: int,
    n_bg: int,
    per_class: int,
    separation: float,
    noise_sigma: float,
    seed: int,
) -> Dataset:
    """Foreground class c ~ N(separation * u_c, noise_sigma^2 I) with random unit u_c;
    background ~ N(0, (2 * separation)^2 I), flagged 0 with hidden class -1.

    The u_c are mutually orthogonal whenever n_fg_classes <= D.
    """
    if separation <= 0 or noise_sigma <= 0:
        raise ValueError("separation and noise_sigma must be positive")
    if D < 1 or n_fg_classes < 1:
        raise ValueError("D and n_fg_classes must be positive")
    if n_bg < 0 or per_class < 0:
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n_fg_classes, D))
    if n_fg_classes <= D:
        # random orthonormal directions: centres pairwise sqrt(2) * separation apart
        q, r = np.linalg.qr(u.T)
        u = (q * np.sign(np.diag(r))).T
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    centers = separation * u
    fg = centers.repeat(per_class, axis=0) + rng.normal(0.0, noise_sigma, size=(n_fg_classes * per_class, D))
    bg = rng.normal(0.0, 2.0 * separation, size=(n_bg, D))
    features = np.vstack([fg, bg])
    flags = np.r_[np.ones(len(fg), dtype=np.int64), np.zeros(n_bg, dtype=np.int64)]
    hidden = np.r_[np.arange(n_fg_classes).repeat(per_class), np.full(n_bg, BACKGROUND)]
    order = rng.permutation(len(features))
    return Dataset(features[order], flags[order], hidden[order], centers)


def read_cifar10_binary(paths) -> tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batch files.

    Each 3073-byte record is one label byte followed by the 1024 R, 1024 G and
    1024 B bytes of a 32x32 image. Returns ``(labels, pixels)`` with pixels
    scaled to [0, 1] as an (N, 3072) float64 array.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    labels, pixels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            offset = raw.size - raw.size % CIFAR_RECORD
            raise CifarFormatError(
                f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}; "
                f"truncated record at byte offset {offset}"
            )
        rec = raw.reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(rec[:, 0] > 9)
        if bad.size:
            raise CifarFormatError(
                f"{path}: label byte {rec[bad[0], 0]} > 9 at byte offset {bad[0] * CIFAR_RECORD}"
            )
        labels.append(rec[:, 0].astype(np.int64))
        pixels.append(rec[:, 1:].astype(np.float64) / 255.0)
    if not labels:
        return np.zeros(0, dtype=np.int64), np.zeros((0, CIFAR_PIXELS))
    return np.concatenate(labels), np.vstack(pixels)


def relabel_foreground(raw: tuple[np.ndarray, np.ndarray], fg_classes) -> Dataset:
    labels, pixels = raw
    fg_classes = set(int(c) for c in fg_classes)
    if not fg_classes:
        raise ValueError("fg_classes must be nonempty")
    missing = fg_classes - set(np.unique(labels).tolist())
    if missing:
        raise ValueError(f"foreground classes {sorted(missing)} not present in the data")
    flags = np.isin(labels, sorted(fg_classes)).astype(np.int64)
    return Dataset(pixels, flags, labels)


def downsample_background(ds: Dataset, keep: float, seed: int) -> Dataset:
    if not 0 < keep <= 1:
        raise ValueError("background keep ratio must be in (0, 1]")
    if keep == 1:
        return ds
    rng = np.random.default_rng(seed)
    bg = np.flatnonzero(ds.fg_flags == 0)
    drop = rng.choice(bg, size=bg.size - int(round(keep * bg.size)), replace=False)
    mask = np.ones(len(ds), dtype=bool)
    mask[drop] = False
    return ds.subset(mask)


def split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``fraction`` of samples become the train split."""
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = int(round(fraction * len(ds)))
    return ds.subset(order[:cut]), ds.subset(order[cut:])


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        std = features.std(axis=0)
        std[std == 0] = 1.0
        return cls(features.mean(axis=0), std)

    def __call__(self, ds: Dataset) -> Dataset:
        return Dataset((ds.features - self.mean) / self.std, ds.fg_flags, ds.hidden_class, ds.centers)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hidden_class", "fg_flag"] + [f"f_{j}" for j in range(ds.dim)])
        for h, f, row in zip(ds.hidden_class, ds.fg_flags, ds.features):
            w.writerow([int(h), int(f)] + [repr(float(v)) for v in row])


def read_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["hidden_class", "fg_flag"]:
        raise ValueError(f"{path}: unexpected header {header[:2]}")
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return Dataset(arr[:, 2:], arr[:, 1].astype(np.int64), arr[:, 0].astype(np.int64))
