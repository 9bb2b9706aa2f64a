"""Synthetic label corruption: symmetric, class-map asymmetric, and circular
within class groups.  The true labels are kept for evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .datasets import Dataset

KINDS = ("symmetric", "asymmetric_map", "circular_groups")


class NoiseSpecError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rate: float
    mapping: dict | None = None
    groups: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NoiseSpecError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise NoiseSpecError(f"noise rate {self.rate} outside [0, 1]")
        if self.kind == "asymmetric_map" and not self.mapping:
            raise NoiseSpecError("asymmetric_map noise needs a label map")
        if self.kind == "circular_groups" and not self.groups:
            raise NoiseSpecError("circular_groups noise needs class groups")


@dataclass
class NoisyDataset:
    data: Dataset           # given labels corrupted, true labels intact
    flipped: np.ndarray     # the injector's own record of which labels it changed

    @property
    def clean_mask(self) -> np.ndarray:
        return self.data.given == self.data.true

    @property
    def realized_rate(self) -> float:
        return float(self.flipped.mean()) if len(self.flipped) else 0.0


def _truth(dataset: Dataset) -> np.ndarray:
    if dataset.true is None:
        raise ValueError("noise injection needs the true labels")
    return dataset.true


def inject_symmetric(dataset: Dataset, eta: float, rng: np.random.Generator) -> NoisyDataset:
    """Flip each label with probability ``eta`` to a uniformly drawn different class."""
    NoiseSpec("symmetric", eta)
    y = _truth(dataset)
    c = dataset.n_classes
    n = len(y)
    flip = rng.random(n) < eta
    r = rng.integers(0, c - 1, size=n)
    other = r + (r >= y)
    given = np.where(flip, other, y)
    return NoisyDataset(dataset.with_given(given), flip)


def inject_asymmetric_map(dataset: Dataset, eta: float, mapping: dict,
                          rng: np.random.Generator) -> NoisyDataset:
    """With probability ``eta`` relabel samples of each source class as ``mapping[class]``."""
    NoiseSpec("asymmetric_map", eta, mapping=mapping)
    c = dataset.n_classes
    table = np.arange(c)
    for src, dst in mapping.items():
        src, dst = int(src), int(dst)
        if not (0 <= src < c and 0 <= dst < c):
            raise NoiseSpecError(f"map entry {src}->{dst} outside [0, {c})")
        if src == dst:
            raise NoiseSpecError(f"map entry {src}->{dst} maps a class to itself")
        table[src] = dst
    y = _truth(dataset)
    flip = (rng.random(len(y)) < eta) & (table[y] != y)
    given = np.where(flip, table[y], y)
    return NoisyDataset(dataset.with_given(given), flip)


def check_partition(groups, c: int) -> list:
    groups = [[int(v) for v in g] for g in groups]
    seen = sorted(v for g in groups for v in g)
    if seen != list(range(c)):
        raise NoiseSpecError(f"groups must partition the labels 0..{c - 1} exactly once each")
    return groups


def inject_circular(dataset: Dataset, eta: float, groups, rng: np.random.Generator) -> NoisyDataset:
    """With probability ``eta`` advance a label to the next class of its group, wrapping around."""
    NoiseSpec("circular_groups", eta, groups=tuple(map(tuple, groups)))
    c = dataset.n_classes
    groups = check_partition(groups, c)
    nxt = np.arange(c)
    for g in groups:
        for a, b in zip(g, g[1:] + g[:1]):
            nxt[a] = b
    y = _truth(dataset)
    flip = (rng.random(len(y)) < eta) & (nxt[y] != y)
    given = np.where(flip, nxt[y], y)
    return NoisyDataset(dataset.with_given(given), flip)


def inject(dataset: Dataset, spec: NoiseSpec, rng: np.random.Generator) -> NoisyDataset:
    if spec.kind == "symmetric":
        return inject_symmetric(dataset, spec.rate, rng)
    if spec.kind == "asymmetric_map":
        return inject_asymmetric_map(dataset, spec.rate, spec.mapping, rng)
    return inject_circular(dataset, spec.rate, spec.groups, rng)


def no_noise(dataset: Dataset) -> NoisyDataset:
    truth = _truth(dataset)
    return NoisyDataset(dataset.with_given(truth.copy()), np.zeros(len(dataset), dtype=bool))


# -- table files ------------------------------------------------------------

def _lines(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def parse_map(text: str) -> dict:
    """``src:dst`` pairs separated by newlines or commas."""
    out = {}
    entries = [e.strip() for line in _lines(text) for e in line.split(",") if e.strip()]
    for line in entries:
        try:
            src, dst = line.split(":")
            out[int(src)] = int(dst)
        except ValueError as exc:
            raise NoiseSpecError(f"bad map entry {line!r}") from exc
    return out


def parse_groups(text: str) -> list:
    """One group per line (or per ``|``-separated chunk), whitespace-separated labels."""
    try:
        chunks = [c for line in _lines(text) for c in line.split("|") if c.strip()]
        return [[int(v) for v in chunk.split()] for chunk in chunks]
    except ValueError as exc:
        raise NoiseSpecError(f"bad group table: {exc}") from exc


def cifar10_asymmetric_map() -> dict:
    return parse_map(resources.files("jnpl.data").joinpath("cifar10_asymmetric.txt").read_text())


def cifar100_superclasses() -> list:
    return parse_groups(resources.files("jnpl.data").joinpath("cifar100_superclasses.txt").read_text())


def write_flip_log(path, noisy: NoisyDataset) -> None:
    """CSV of changed labels: sample_id,true,given."""
    d = noisy.data
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true", "given"])
        for i in np.flatnonzero(noisy.flipped):
            w.writerow([int(d.ids[i]), int(d.true[i]), int(d.given[i])])


def read_flip_log(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {int(r["sample_id"]): (int(r["true"]), int(r["given"])) for r in rows}
