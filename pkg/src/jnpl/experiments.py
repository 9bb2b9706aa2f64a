"""The desk-scale blob task and helpers shared by the CLI and the acceptance runs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .datasets import Dataset, gen_blobs
from .evaluation import ap_scores
from .model import Mlp, predict_proba
from .noise import NoisyDataset, inject_asymmetric_map, inject_symmetric, no_noise
from .pipeline import Monitor, TrainResult, TrainRunConfig, oracle_verdicts, pseudo_label_train, train, train_supervised
from .probs import stream

CANONICAL = {"c": 4, "n": 4000, "dim": 8, "separation": 6.0, "n_test": 2000, "seed": 17}


def canonical_task(**overrides) -> tuple[Dataset, Dataset]:
    spec = {**CANONICAL, **overrides}
    return gen_blobs(spec["c"], spec["n"], spec["dim"], spec["separation"],
                     stream(spec["seed"], "blobs"), n_test=spec["n_test"])


def symmetric(train_set: Dataset, eta: float, seed: int) -> NoisyDataset:
    return inject_symmetric(train_set, eta, stream(seed, "noise"))


def pairwise_flip(train_set: Dataset, pair: tuple, eta: float, seed: int) -> NoisyDataset:
    a, b = pair
    return inject_asymmetric_map(train_set, eta, {a: b, b: a}, stream(seed, "noise"))


def run(noisy: NoisyDataset, test: Dataset, cfg: TrainRunConfig, sink=None) -> TrainResult:
    return train(noisy.data.train_view(), cfg, Monitor(noisy, test, sink))


def final(result: TrainResult, key: str, stage: str | None = None):
    recs = result.metrics if stage is None else [m for m in result.metrics if m["stage"] == stage]
    return recs[-1][key]


def pair_ap(params: Mlp, noisy: NoisyDataset, pair) -> float:
    """Clean-positive AP restricted to samples whose given label is in ``pair``."""
    d = noisy.data
    sel = np.isin(d.given, list(pair))
    probs = predict_proba(params, d.features[sel])
    p_given = probs[np.arange(sel.sum()), d.given[sel]]
    return ap_scores(p_given, noisy.clean_mask[sel], d.ids[sel])


def pseudo_from(result: TrainResult, noisy: NoisyDataset, test: Dataset, cfg: TrainRunConfig) -> TrainResult:
    return pseudo_label_train(noisy.data.train_view(), result.verdicts, cfg, Monitor(noisy, test))


def oracle_pseudo(noisy: NoisyDataset, test: Dataset, cfg: TrainRunConfig) -> TrainResult:
    return pseudo_label_train(noisy.data.train_view(), oracle_verdicts(noisy), cfg, Monitor(noisy, test))


def clean_reference(train_set: Dataset, test: Dataset, cfg: TrainRunConfig) -> TrainResult:
    """Pseudo-label recipe (fresh model, same schedule) on the uncorrupted labels."""
    clean = no_noise(train_set)
    view = clean.data.train_view()
    return train_supervised(view, np.arange(len(view)), view.given, cfg.pseudo_epochs,
                            cfg.pseudo_schedule, cfg, Monitor(clean, test))


def with_seed(cfg: TrainRunConfig, seed: int, **kw) -> TrainRunConfig:
    return replace(cfg, seed=seed, **kw)
