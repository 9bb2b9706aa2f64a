"""Training procedures: single-stage JNPL, the three-stage NLNL baseline,
plain cross-entropy, and pseudo-label retraining on filtered data."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset, TrainView
from .evaluation import UndefinedMetric, accuracy_of_probs, ap_scores
from .losses import JnplConfig, jnpl_loss, nl_loss_batch, pl_loss_batch, soft_ce_batch
from .model import LrSchedule, Mlp, MlpSpec, OptimizerState, backward, forward, init_mlp, predict_proba, sgd_step
from .noise import NoisyDataset
from .probs import argmax, sample_complementary_batch, stream

log = logging.getLogger(__name__)

METHODS = ("jnpl", "nlnl", "pl_baseline", "nlplus")
SELPL_THRESHOLD = 0.5


class TrainingDiverged(FloatingPointError):
    pass


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainRunConfig:
    method: str = "jnpl"
    epochs: int = 200                       # jnpl / nlplus / pl_baseline
    nlnl_epochs: tuple = (120, 80, 40)      # NL, SelNL, SelPL
    batch_size: int = 128
    schedule: LrSchedule = LrSchedule(0.01, (160,))
    k_complementary: int = 1
    jnpl: JnplConfig = JnplConfig()
    seed: int = 0
    hidden: tuple = (64, 64)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    pseudo_epochs: int = 100
    pseudo_schedule: LrSchedule = LrSchedule(0.1, (40, 60))
    pseudo_targets: str = "hard"            # hard | soft
    pseudo_gate: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.pseudo_epochs < 0 or len(self.nlnl_epochs) != 3 \
                or min(self.nlnl_epochs) < 0:
            raise ValueError("epoch counts must be non-negative (three NLNL stages)")
        if self.pseudo_targets not in ("hard", "soft"):
            raise ValueError("pseudo_targets must be 'hard' or 'soft'")

    @classmethod
    def desk(cls, **overrides) -> "TrainRunConfig":
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainRunConfig":
        base = dict(epochs=1000, nlnl_epochs=(600, 400, 200), schedule=LrSchedule(0.01, (800,)),
                    pseudo_epochs=480, pseudo_schedule=LrSchedule(0.1, (192, 288)))
        base.update(overrides)
        return cls(**base)

    @property
    def total_epochs(self) -> int:
        return sum(self.nlnl_epochs) if self.method == "nlnl" else self.epochs


@dataclass(frozen=True)
class FilterVerdict:
    sample_id: int
    is_clean_predicted: bool
    clean_score: float
    pseudo_target: np.ndarray = field(compare=False)


@dataclass
class TrainResult:
    params: Mlp
    metrics: list
    verdicts: list | None = None
    stage_params: dict = field(default_factory=dict)


class Monitor:
    """Per-epoch metric records.  Holds the hidden truth, which trainers never see.

    ``sink`` is an optional text file; every record is written to it as one
    JSON line as soon as it is produced.
    """

    def __init__(self, noisy: NoisyDataset | None = None, test: Dataset | None = None, sink=None):
        self.noisy = noisy
        self.test = test
        self.sink = sink

    def record(self, epoch: int, method: str, stage: str, params: Mlp, stats: dict) -> dict:
        rec = {"epoch": epoch, "method": method, "stage": stage, **stats,
               "train_acc_clean": None, "train_acc_noisy": None, "test_acc": None,
               "ap_clean": None, "ap_noisy": None}
        if self.noisy is not None:
            d = self.noisy.data
            probs = predict_proba(params, d.features)
            clean = self.noisy.clean_mask
            pred = argmax(probs)
            if clean.any():
                rec["train_acc_clean"] = float(np.mean(pred[clean] == d.true[clean]))
            if (~clean).any():
                rec["train_acc_noisy"] = float(np.mean(pred[~clean] == d.true[~clean]))
            p_given = probs[np.arange(len(d)), d.given]
            try:
                rec["ap_clean"] = ap_scores(p_given, clean, d.ids)
                rec["ap_noisy"] = ap_scores(-p_given, ~clean, d.ids)
            except UndefinedMetric:
                pass
        if self.test is not None and len(self.test):
            rec["test_acc"] = accuracy_of_probs(predict_proba(params, self.test.features), self.test.true)
        if self.sink is not None:
            self.sink.write(json.dumps(rec) + "\n")
            self.sink.flush()
        return rec


class _Run:
    """Shared mini-batch loop.  Random draws come from separate named streams
    so that, e.g., switching PL+ off leaves the complementary labels unchanged."""

    def __init__(self, view: TrainView, cfg: TrainRunConfig, monitor, on_epoch, prefix: str = ""):
        self.view = view
        self.cfg = cfg
        self.monitor = monitor
        self.on_epoch = on_epoch
        spec = MlpSpec((view.features.shape[1], *cfg.hidden, view.n_classes))
        self.params = init_mlp(spec, stream(cfg.seed, prefix + "init"))
        self.opt = OptimizerState.fresh(self.params, cfg.momentum, cfg.weight_decay)
        self.shuffle = stream(cfg.seed, prefix + "shuffle")
        self.comp_rng = stream(cfg.seed, "complementary")
        self.select_rng = stream(cfg.seed, "select")
        self.metrics = []

    def epoch(self, epoch: int, lr: float, indices: np.ndarray, targets, step, method: str, stage: str):
        stats = {"loss_nl": 0.0, "n_nl": 0, "loss_pl": 0.0, "n_pl": 0, "n_plplus_accepted": 0}
        order = indices[self.shuffle.permutation(len(indices))]
        bs = self.cfg.batch_size
        for s in range(0, len(order), bs):
            idx = order[s:s + bs]
            # overflow is reported below as TrainingDiverged, not as a warning
            with np.errstate(over="ignore", invalid="ignore"):
                logits, cache = forward(self.params, self.view.features[idx])
            if not np.all(np.isfinite(logits)):
                raise TrainingDiverged(f"non-finite logits at epoch {epoch}, batch starting {s}")
            total, grad = step(logits, targets[idx], stats)
            if not np.isfinite(total) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {s}")
            sgd_step(self.params, backward(cache, grad), self.opt, lr)
        if not all(np.all(np.isfinite(w)) for w in self.params.weights):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        stats["loss_nl"] = stats["loss_nl"] / stats["n_nl"] if stats["n_nl"] else None
        stats["loss_pl"] = stats["loss_pl"] / stats["n_pl"] if stats["n_pl"] else None
        stats["lr"] = lr
        if self.monitor is not None:
            rec = self.monitor.record(epoch, method, stage, self.params, stats)
        else:
            rec = {"epoch": epoch, "method": method, "stage": stage, **stats}
        self.metrics.append(rec)
        if self.on_epoch is not None:
            self.on_epoch(epoch, self.params)

    # step functions: (logits, batch targets, stats) -> (loss, d loss / d logits)

    def nl_step(self, plus: bool):
        c, k = self.view.n_classes, self.cfg.k_complementary

        def step(logits, y, stats):
            b = len(y)
            comp = sample_complementary_batch(y, c, k, self.comp_rng)
            v, g, _ = nl_loss_batch(logits, comp, plus=plus)
            stats["loss_nl"] += float(v.sum())
            stats["n_nl"] += b
            return float(v.sum() / b), g / b
        return step

    def jnpl_step(self):
        c, k = self.view.n_classes, self.cfg.k_complementary
        jcfg = self.cfg.jnpl

        def step(logits, y, stats):
            r = jnpl_loss(logits, y, jcfg, self.comp_rng, k=k, select_rng=self.select_rng)
            stats["loss_nl"] += r.nl_value * len(y)
            stats["n_nl"] += len(y)
            stats["loss_pl"] += r.pl_value * r.n_accepted
            stats["n_pl"] += r.n_accepted
            stats["n_plplus_accepted"] += r.n_accepted
            return r.total, r.grads
        return step

    def pl_step(self):
        def step(logits, y, stats):
            b = len(y)
            v, g = pl_loss_batch(logits, y)
            stats["loss_pl"] += float(v.sum())
            stats["n_pl"] += b
            return float(v.sum() / b), g / b
        return step

    def soft_step(self):
        def step(logits, t, stats):
            b = len(t)
            v, g = soft_ce_batch(logits, t)
            stats["loss_pl"] += float(v.sum())
            stats["n_pl"] += b
            return float(v.sum() / b), g / b
        return step


def filter_verdicts(params: Mlp, view: TrainView) -> list[FilterVerdict]:
    """Predicted clean iff every class other than the given label has
    probability strictly below 1/c."""
    probs = predict_proba(params, view.features)
    n, c = probs.shape
    rows = np.arange(n)
    p_given = probs[rows, view.given]
    others = probs.copy()
    others[rows, view.given] = -np.inf
    clean = others.max(axis=1) < 1.0 / c
    return [FilterVerdict(int(view.ids[i]), bool(clean[i]), float(p_given[i]), probs[i])
            for i in range(n)]


def train_jnpl(view: TrainView, cfg: TrainRunConfig, monitor: Monitor | None = None,
               on_epoch=None) -> TrainResult:
    """NL+ on every sample plus lam * PL+ on the Bernoulli-accepted candidates,
    one stage.  With ``cfg.method == "nlplus"`` the PL+ term is dropped."""
    run = _Run(view, cfg, monitor, on_epoch)
    plus_only = cfg.method == "nlplus"
    step = run.nl_step(plus=True) if plus_only else run.jnpl_step()
    name = "nlplus" if plus_only else "jnpl"
    every = np.arange(len(view))
    for e in range(cfg.epochs):
        run.epoch(e, cfg.schedule.lr(e), every, view.given, step, name, name)
    return TrainResult(run.params, run.metrics, filter_verdicts(run.params, view))


def _p_given(params: Mlp, view: TrainView) -> np.ndarray:
    probs = predict_proba(params, view.features)
    return probs[np.arange(len(view)), view.given]


def stage_selection(p_given: np.ndarray, stage: int, c: int) -> np.ndarray:
    """Indices trained in an NLNL stage: all (1), p_y > 1/c (2), p_y > 0.5 (3)."""
    if stage == 1:
        return np.arange(len(p_given))
    threshold = 1.0 / c if stage == 2 else SELPL_THRESHOLD
    return np.flatnonzero(p_given > threshold)


def train_nlnl(view: TrainView, cfg: TrainRunConfig, monitor: Monitor | None = None,
               on_epoch=None) -> TrainResult:
    """NL on all data, then NL on p_y > 1/c, then PL on p_y > 0.5.  The
    selections are re-evaluated at the start of every epoch.

    ``stage_params[s]`` holds a copy of the model at the end of stage ``s``.
    """
    run = _Run(view, cfg, monitor, on_epoch)
    c = view.n_classes
    steps = {1: run.nl_step(plus=False), 2: run.nl_step(plus=False), 3: run.pl_step()}
    names = {1: "nl", 2: "selnl", 3: "selpl"}
    stage_params = {}
    e = 0
    for stage, n_epochs in zip((1, 2, 3), cfg.nlnl_epochs):
        for _ in range(n_epochs):
            idx = stage_selection(_p_given(run.params, view), stage, c)
            run.epoch(e, cfg.schedule.lr(e), idx, view.given, steps[stage], "nlnl", names[stage])
            e += 1
        stage_params[stage] = run.params.copy()
    return TrainResult(run.params, run.metrics, filter_verdicts(run.params, view), stage_params)


def train_pl_baseline(view: TrainView, cfg: TrainRunConfig, monitor: Monitor | None = None,
                      on_epoch=None) -> TrainResult:
    run = _Run(view, cfg, monitor, on_epoch)
    every = np.arange(len(view))
    step = run.pl_step()
    for e in range(cfg.epochs):
        run.epoch(e, cfg.schedule.lr(e), every, view.given, step, "pl_baseline", "pl")
    return TrainResult(run.params, run.metrics, filter_verdicts(run.params, view))


def train(view: TrainView, cfg: TrainRunConfig, monitor: Monitor | None = None,
          on_epoch=None) -> TrainResult:
    if cfg.method in ("jnpl", "nlplus"):
        return train_jnpl(view, cfg, monitor, on_epoch)
    if cfg.method == "nlnl":
        return train_nlnl(view, cfg, monitor, on_epoch)
    return train_pl_baseline(view, cfg, monitor, on_epoch)


def train_supervised(view: TrainView, indices: np.ndarray, targets: np.ndarray, epochs: int,
                     schedule: LrSchedule, cfg: TrainRunConfig, monitor: Monitor | None = None,
                     on_epoch=None, method: str = "pseudo", prefix: str = "pseudo_") -> TrainResult:
    """Cross-entropy on ``indices`` of a freshly initialized model.

    ``targets`` is indexed like the view: a label vector (hard) or an
    (n, c) probability matrix (soft).
    """
    run = _Run(view, cfg, monitor, on_epoch, prefix=prefix)
    step = run.soft_step() if targets.ndim == 2 else run.pl_step()
    for e in range(epochs):
        run.epoch(e, schedule.lr(e), indices, targets, step, method, method)
    return TrainResult(run.params, run.metrics)


def pseudo_label_targets(view: TrainView, verdicts, mode: str = "hard", gate: float = 0.5):
    """Training indices and targets for pseudo-label retraining.

    Predicted-clean samples keep their given label.  Others are used only when
    their model confidence exceeds ``gate``, with the argmax class (hard) or
    the full probability vector (soft) as target.
    """
    if len(verdicts) != len(view):
        raise PipelineError("verdicts do not cover the dataset")
    by_id = {v.sample_id: v for v in verdicts}
    try:
        ordered = [by_id[int(i)] for i in view.ids]
    except KeyError as exc:
        raise PipelineError(f"no verdict for sample {exc}") from exc
    clean = np.array([v.is_clean_predicted for v in ordered], dtype=bool)
    if not clean.any():
        raise PipelineError("no sample was predicted clean; nothing to anchor pseudo-labeling")
    pt = np.array([v.pseudo_target for v in ordered], dtype=np.float64)
    use = clean | (pt.max(axis=1) > gate)
    c = view.n_classes
    if mode == "hard":
        targets = np.where(clean, view.given, argmax(pt))
    elif mode == "soft":
        targets = np.where(clean[:, None], np.eye(c)[view.given], pt)
    else:
        raise ValueError(f"unknown pseudo-label mode {mode!r}")
    return np.flatnonzero(use), targets


def pseudo_label_train(view: TrainView, verdicts, cfg: TrainRunConfig, monitor: Monitor | None = None,
                       on_epoch=None) -> TrainResult:
    idx, targets = pseudo_label_targets(view, verdicts, cfg.pseudo_targets, cfg.pseudo_gate)
    log.info("pseudo-labeling: %d of %d samples used (%s targets)", len(idx), len(view), cfg.pseudo_targets)
    return train_supervised(view, idx, targets, cfg.pseudo_epochs, cfg.pseudo_schedule, cfg,
                            monitor, on_epoch)


def oracle_verdicts(noisy: NoisyDataset) -> list[FilterVerdict]:
    """Verdicts that know the truth: exact clean mask, one-hot true labels as pseudo-targets."""
    d = noisy.data
    eye = np.eye(d.n_classes)
    clean = noisy.clean_mask
    return [FilterVerdict(int(d.ids[i]), bool(clean[i]), 1.0 if clean[i] else 0.0, eye[d.true[i]])
            for i in range(len(d))]


def write_verdicts_csv(path, verdicts, given, true=None) -> None:
    """sample_id,given,true,clean_score,is_clean_predicted,pseudo_label,p_comp_max"""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "given", "true", "clean_score", "is_clean_predicted",
                    "pseudo_label", "p_comp_max"])
        for i, v in enumerate(verdicts):
            pt = np.asarray(v.pseudo_target)
            others = pt.copy()
            others[int(given[i])] = -np.inf
            w.writerow([v.sample_id, int(given[i]), "" if true is None else int(true[i]),
                        repr(v.clean_score), int(v.is_clean_predicted), int(argmax(pt)),
                        repr(float(others.max()))])


def read_verdicts_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({"sample_id": int(r["sample_id"]), "given": int(r["given"]),
                    "true": int(r["true"]) if r["true"] != "" else None,
                    "clean_score": float(r["clean_score"]),
                    "is_clean_predicted": r["is_clean_predicted"] == "1",
                    "pseudo_label": int(r["pseudo_label"]),
                    "p_comp_max": float(r["p_comp_max"])})
    return out


def with_method(cfg: TrainRunConfig, method: str, **kw) -> TrainRunConfig:
    return replace(cfg, method=method, **kw)
