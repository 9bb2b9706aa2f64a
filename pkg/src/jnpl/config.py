"""Plain-text ``key = value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .losses import JnplConfig
from .model import LrSchedule
from .noise import (NoiseSpec, NoiseSpecError, cifar10_asymmetric_map, cifar100_superclasses,
                    parse_groups, parse_map)
from .pipeline import TrainRunConfig


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> parser; anything else is rejected
SCHEMA = {
    "seed": int,
    "out": str,
    "scale": str,
    "data.source": str,
    "data.c": int,
    "data.n": int,
    "data.dim": int,
    "data.separation": float,
    "data.n_test": int,
    "data.seed": int,
    "data.train_path": str,
    "data.test_path": str,
    "noise.kind": str,
    "noise.rate": float,
    "noise.map": str,
    "noise.groups": str,
    "train.method": str,
    "train.epochs": int,
    "train.nlnl_epochs": _int_list,
    "train.lr": float,
    "train.milestones": _int_list,
    "train.decay_factor": float,
    "train.batch_size": int,
    "train.k": int,
    "train.lambda": float,
    "train.n_exponent": int,
    "train.hidden": _int_list,
    "train.momentum": float,
    "train.weight_decay": float,
    "pseudo.enabled": _bool,
    "pseudo.epochs": int,
    "pseudo.lr": float,
    "pseudo.milestones": _int_list,
    "pseudo.targets": str,
    "pseudo.gate": float,
    "eval.bins": int,
}
PATH_KEYS = ("out", "data.train_path", "data.test_path")
DATA_SOURCES = ("blobs", "csv", "cifar10")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<memory>"

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r} in {self.source}")
        return self.values[key]

    def as_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.values.items()))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_config(text: str, source: str = "<memory>", base_dir: Path | None = None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    base = base_dir or Path.cwd()
    for key in PATH_KEYS:
        if key in values:
            parts = [str((base / p.strip()).resolve()) for p in values[key].split(",") if p.strip()]
            values[key] = ",".join(parts)
    if values.get("scale", "desk") not in ("desk", "paper"):
        raise ConfigError(f"scale must be desk or paper, got {values['scale']!r}")
    if "data.source" in values and values["data.source"] not in DATA_SOURCES:
        raise ConfigError(f"data.source must be one of {DATA_SOURCES}")
    return ExperimentConfig(values, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), path.parent.resolve())


def noise_spec(cfg: ExperimentConfig) -> NoiseSpec | None:
    kind = cfg.require("noise.kind")
    if kind == "none":
        return None
    rate = cfg.require("noise.rate")
    try:
        if kind == "symmetric":
            return NoiseSpec(kind, rate)
        if kind == "asymmetric_map":
            text = cfg.require("noise.map")
            mapping = cifar10_asymmetric_map() if text == "cifar10" else parse_map(text)
            return NoiseSpec(kind, rate, mapping=mapping)
        if kind == "circular_groups":
            text = cfg.require("noise.groups")
            if text == "cifar100":
                groups = cifar100_superclasses()
            elif Path(text).is_file():
                groups = parse_groups(Path(text).read_text(encoding="utf-8"))
            else:
                groups = parse_groups(text)
            return NoiseSpec(kind, rate, groups=tuple(map(tuple, groups)))
        return NoiseSpec(kind, rate)
    except NoiseSpecError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: ExperimentConfig, seed: int, method: str | None = None) -> TrainRunConfig:
    method = method or cfg.require("train.method")
    if method == "pl":
        method = "pl_baseline"
    base = TrainRunConfig.full_scale() if cfg.get("scale", "desk") == "paper" else TrainRunConfig.desk()
    sched = base.schedule
    psched = base.pseudo_schedule
    try:
        return TrainRunConfig(
            method=method,
            epochs=cfg.get("train.epochs", base.epochs),
            nlnl_epochs=cfg.get("train.nlnl_epochs", base.nlnl_epochs),
            batch_size=cfg.get("train.batch_size", base.batch_size),
            schedule=LrSchedule(cfg.get("train.lr", sched.initial),
                                cfg.get("train.milestones", sched.milestones),
                                cfg.get("train.decay_factor", sched.decay_factor)),
            k_complementary=cfg.get("train.k", base.k_complementary),
            jnpl=JnplConfig(cfg.get("train.lambda", base.jnpl.lam),
                            cfg.get("train.n_exponent", base.jnpl.n_exponent)),
            seed=seed,
            hidden=cfg.get("train.hidden", base.hidden),
            momentum=cfg.get("train.momentum", base.momentum),
            weight_decay=cfg.get("train.weight_decay", base.weight_decay),
            pseudo_epochs=cfg.get("pseudo.epochs", base.pseudo_epochs),
            pseudo_schedule=LrSchedule(cfg.get("pseudo.lr", psched.initial),
                                       cfg.get("pseudo.milestones", psched.milestones),
                                       cfg.get("train.decay_factor", psched.decay_factor)),
            pseudo_targets=cfg.get("pseudo.targets", base.pseudo_targets),
            pseudo_gate=cfg.get("pseudo.gate", base.pseudo_gate),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
