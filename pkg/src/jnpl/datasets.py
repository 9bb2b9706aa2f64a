"""Labeled datasets: synthetic Gaussian blobs, the CIFAR-10 binary format,
and a CSV interchange format."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


class DataFormatError(ValueError):
    pass


class LabeledSample(NamedTuple):
    id: int
    features: np.ndarray
    given_label: int
    true_label: int | None


@dataclass(frozen=True)
class TrainView:
    """What a trainer is allowed to see: ids, features and given labels."""
    ids: np.ndarray
    features: np.ndarray
    given: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.ids)


@dataclass
class Dataset:
    ids: np.ndarray
    features: np.ndarray
    given: np.ndarray
    true: np.ndarray | None
    n_classes: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.given = np.asarray(self.given, dtype=np.int64)
        if self.true is not None:
            self.true = np.asarray(self.true, dtype=np.int64)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n or self.given.shape != (n,):
            raise DataFormatError("ids, features and labels disagree in length")
        if self.true is not None and self.true.shape != (n,):
            raise DataFormatError("true labels disagree in length")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> LabeledSample:
        true = None if self.true is None else int(self.true[i])
        return LabeledSample(int(self.ids[i]), self.features[i], int(self.given[i]), true)

    def train_view(self) -> TrainView:
        return TrainView(self.ids, self.features, self.given, self.n_classes)

    def with_given(self, given) -> "Dataset":
        return Dataset(self.ids, self.features, np.asarray(given, dtype=np.int64), self.true, self.n_classes)


def _blob_means(c: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    if c <= dim:
        # scaled orthonormal axes: every pair sits exactly `separation` apart
        means = np.zeros((c, dim))
        means[np.arange(c), np.arange(c)] = separation / np.sqrt(2.0)
        return means
    means = rng.standard_normal((c, dim))
    d = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(-1))
    dmin = d[np.triu_indices(c, 1)].min()
    if dmin == 0:
        raise ValueError("degenerate random cluster centres")
    return means * (separation / dmin)


def _balanced_labels(n: int, c: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % c)


def gen_blobs(c: int, n: int, dim: int, separation: float, rng: np.random.Generator,
              n_test: int = 0) -> tuple[Dataset, Dataset]:
    """Isotropic unit-variance Gaussian clusters, one per class.

    Returns ``(train, test)``; both are standardized with the train statistics
    and carry clean labels (given == true).  Test ids continue after the train
    ids.
    """
    if c < 2:
        raise ValueError("need at least 2 classes")
    if n < c:
        raise ValueError("need n >= c so every class has a sample")
    if dim < 1:
        raise ValueError("dim must be positive")
    if not np.isfinite(separation) or separation < 0:
        raise ValueError("separation must be a finite non-negative number")
    means = _blob_means(c, dim, float(separation), rng)

    def draw(m):
        y = _balanced_labels(m, c, rng)
        return means[y] + rng.standard_normal((m, dim)), y

    x, y = draw(n)
    xt, yt = draw(n_test) if n_test else (np.zeros((0, dim)), np.zeros(0, dtype=np.int64))
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x = (x - mu) / sd
    xt = (xt - mu) / sd
    train = Dataset(np.arange(n), x, y, y.copy(), c)
    test = Dataset(np.arange(n, n + n_test), xt, yt, yt.copy(), c)
    return train, test


def read_cifar10_bin(paths) -> Dataset:
    """Read CIFAR-10 binary batches.

    Each record is one label byte followed by 1024 red, 1024 green and 1024
    blue bytes of a 32x32 image.  Pixels are scaled to [0, 1], the per-channel
    mean over all records is subtracted, and the planes are flattened in
    R, G, B order.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    chunks = []
    for p in paths:
        raw = Path(p).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), dtype=np.uint8)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"label byte {labels.max()} outside 0..9")
    px = rec[:, 1:].astype(np.float64).reshape(-1, 3, 1024) / 255.0
    if len(px):
        px -= px.mean(axis=(0, 2), keepdims=True)
    return Dataset(np.arange(len(rec)), px.reshape(-1, CIFAR_PIXELS), labels, labels.copy(), 10)


# CSV interchange: header id,true_label,given_label,f0..f{d-1}; an empty
# true_label cell means the truth is unknown.

def write_csv(path, data: Dataset) -> None:
    header = ["id", "true_label", "given_label"] + [f"f{j}" for j in range(data.dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            true = "" if data.true is None else int(data.true[i])
            w.writerow([int(data.ids[i]), true, int(data.given[i])]
                       + [repr(float(v)) for v in data.features[i]])


def read_csv(path, n_classes: int | None = None) -> Dataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not UTF-8 text") from exc
    if not rows or rows[0][:3] != ["id", "true_label", "given_label"]:
        raise DataFormatError(f"{path}: missing id,true_label,given_label header")
    dim = len(rows[0]) - 3
    body = rows[1:]
    try:
        ids = np.array([int(r[0]) for r in body], dtype=np.int64)
        true_cells = [r[1] for r in body]
        given = np.array([int(r[2]) for r in body], dtype=np.int64)
        feats = np.array([[float(v) for v in r[3:]] for r in body], dtype=np.float64).reshape(len(body), dim)
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    true = None
    if body and all(t != "" for t in true_cells):
        true = np.array([int(t) for t in true_cells], dtype=np.int64)
    if n_classes is None:
        top = [given.max(initial=-1)] + ([true.max(initial=-1)] if true is not None else [])
        n_classes = int(max(top)) + 1
    if given.size and (given.min() < 0 or given.max() >= n_classes):
        raise DataFormatError(f"{path}: given label outside [0, {n_classes})")
    return Dataset(ids, feats, given, true, max(n_classes, 2))
