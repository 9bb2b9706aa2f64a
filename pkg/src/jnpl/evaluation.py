"""Filtering quality (average precision), confidence histograms, accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import Mlp, predict_proba
from .probs import argmax


class UndefinedMetric(ValueError):
    """AP needs at least one positive and one negative record."""


@dataclass(frozen=True)
class FilterRecord:
    sample_id: int
    p_given: float
    p_comp_max: float
    is_actually_clean: bool


@dataclass(frozen=True)
class ApResult:
    ap_clean_positive: float
    ap_noisy_positive: float
    n_clean: int
    n_noisy: int


def records_from_probs(ids, probs, given, clean_mask) -> list[FilterRecord]:
    probs = np.asarray(probs, dtype=np.float64)
    rows = np.arange(len(probs))
    given = np.asarray(given, dtype=np.int64)
    p_given = probs[rows, given]
    others = probs.copy()
    others[rows, given] = -np.inf
    p_comp = others.max(axis=1)
    return [FilterRecord(int(i), float(a), float(b), bool(m))
            for i, a, b, m in zip(ids, p_given, p_comp, clean_mask)]


def ap_scores(scores, is_positive, ids) -> float:
    """Average precision of ranking ``scores`` descending, ties by ascending id.

    AP is the mean, over positives, of the precision at the rank where each
    positive appears.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == len(pos):
        raise UndefinedMetric(f"AP undefined with {n_pos} positives among {len(pos)} records")
    order = np.lexsort((np.asarray(ids), -scores))
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def average_precision(records, positive: str = "clean") -> float:
    """AP of detecting clean samples (rank by p_given, high first) or noisy
    samples (rank by p_given, low first)."""
    ids = np.array([r.sample_id for r in records])
    p = np.array([r.p_given for r in records], dtype=np.float64)
    clean = np.array([r.is_actually_clean for r in records], dtype=bool)
    if positive == "clean":
        return ap_scores(p, clean, ids)
    if positive == "noisy":
        return ap_scores(-p, ~clean, ids)
    raise ValueError(f"positive must be 'clean' or 'noisy', not {positive!r}")


def ap_result(records) -> ApResult:
    n_clean = sum(1 for r in records if r.is_actually_clean)
    return ApResult(average_precision(records, "clean"), average_precision(records, "noisy"),
                    n_clean, len(records) - n_clean)


@dataclass
class Histogram:
    edges: np.ndarray       # shared by both axes, length bins + 1
    clean: np.ndarray       # counts[i, j]: p_comp_max bin i, p_given bin j
    noisy: np.ndarray

    @property
    def total(self) -> int:
        return int(self.clean.sum() + self.noisy.sum())


def export_distribution_histogram(records, bins: int) -> Histogram:
    """2-D counts over (max complementary confidence, confidence at the given label)."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    comp = np.array([r.p_comp_max for r in records], dtype=np.float64)
    given = np.array([r.p_given for r in records], dtype=np.float64)
    clean = np.array([r.is_actually_clean for r in records], dtype=bool)

    def grid(mask):
        h, _, _ = np.histogram2d(comp[mask], given[mask], bins=[edges, edges])
        return h.astype(np.int64)

    return Histogram(edges, grid(clean), grid(~clean))


def write_histogram_csv(path, hist: Histogram) -> None:
    """Long format: split,comp_lo,comp_hi,given_lo,given_hi,count."""
    e = hist.edges
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "comp_lo", "comp_hi", "given_lo", "given_hi", "count"])
        for split, counts in (("clean", hist.clean), ("noisy", hist.noisy)):
            for i in range(len(e) - 1):
                for j in range(len(e) - 1):
                    w.writerow([split, repr(float(e[i])), repr(float(e[i + 1])),
                                repr(float(e[j])), repr(float(e[j + 1])), int(counts[i, j])])


def accuracy_of_probs(probs, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(argmax(probs) == labels))


def accuracy(params: Mlp, features, labels) -> float:
    return accuracy_of_probs(predict_proba(params, features), labels)
