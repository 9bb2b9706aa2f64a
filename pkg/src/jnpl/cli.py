"""Command-line driver: gen | corrupt | train | eval | pipeline.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numeric failure, 5 undefined metric (single-class evaluation data).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, noise_spec, train_config
from .datasets import DataFormatError, Dataset, gen_blobs, read_cifar10_bin, read_csv, write_csv
from .evaluation import (FilterRecord, UndefinedMetric, ap_result, export_distribution_histogram,
                         write_histogram_csv)
from .model import save_checkpoint
from .noise import NoiseSpecError, NoisyDataset, inject, no_noise, read_flip_log, write_flip_log
from .pipeline import (Monitor, PipelineError, TrainingDiverged, pseudo_label_train, read_verdicts_csv,
                       train, write_verdicts_csv)
from .probs import InvalidInput, stream

log = logging.getLogger("jnpl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_UNDEFINED = 0, 2, 3, 4, 5

TRAIN_CSV, TEST_CSV, NOISY_CSV, FLIPS_CSV = "train.csv", "test.csv", "noisy.csv", "flips.csv"
VERDICTS_CSV, METRICS, CHECKPOINT = "verdicts.csv", "metrics.ndjson", "checkpoint.bin"


def sha256_files(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        if p.exists():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Path, seed: int, force: bool, method: str | None):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.force = force
        self.method = method

    def path(self, name) -> Path:
        return self.out / name

    def manifest(self, command: str, **extra) -> dict:
        return {"command": command, "seed": self.seed, "method": self.method,
                "code_version": f"jnpl {__version__}", "config": self.cfg.as_text(), **extra}

    def n_classes(self):
        if "data.c" in self.cfg.values:
            return self.cfg.values["data.c"]
        m = self.path("gen_manifest.json")
        if m.exists():
            return json.loads(m.read_text())["n_classes"]
        return None

    def read(self, name) -> Dataset:
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run the earlier stage first")
        return read_csv(p, self.n_classes())


def cmd_gen(ctx: Context) -> int:
    cfg = ctx.cfg
    train_p, test_p = ctx.path(TRAIN_CSV), ctx.path(TEST_CSV)
    if train_p.exists() and not ctx.force:
        raise FileExistsError(f"{train_p} exists; pass --force to overwrite")
    source = cfg.require("data.source")
    if source == "blobs":
        data_seed = cfg.get("data.seed", 17)
        try:
            train_set, test_set = gen_blobs(cfg.get("data.c", 4), cfg.get("data.n", 4000), cfg.get("data.dim", 8),
                                            cfg.get("data.separation", 6.0), stream(data_seed, "blobs"),
                                            n_test=cfg.get("data.n_test", 2000))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif source == "csv":
        train_set = read_csv(cfg.require("data.train_path"), cfg.get("data.c"))
        test_set = read_csv(cfg.get("data.test_path"), train_set.n_classes) if "data.test_path" in cfg.values else None
    else:
        train_set = read_cifar10_bin(cfg.require("data.train_path").split(","))
        test_set = read_cifar10_bin(cfg.get("data.test_path").split(",")) if "data.test_path" in cfg.values else None
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_csv(train_p, train_set)
    if test_set is not None:
        write_csv(test_p, test_set)
    elif test_p.exists():
        test_p.unlink()
    write_json(ctx.path("gen_manifest.json"), ctx.manifest(
        "gen", n_samples=len(train_set), n_test=0 if test_set is None else len(test_set),
        n_classes=train_set.n_classes, dim=train_set.dim, content_hash=sha256_files(train_p, test_p)))
    log.info("gen: %d train samples -> %s", len(train_set), train_p)
    return EXIT_OK


def cmd_corrupt(ctx: Context) -> int:
    data = ctx.read(TRAIN_CSV)
    if data.true is None:
        raise DataFormatError(f"{ctx.path(TRAIN_CSV)} has no true labels to corrupt")
    spec = noise_spec(ctx.cfg)
    data = data.with_given(data.true)
    try:
        noisy = no_noise(data) if spec is None else inject(data, spec, stream(ctx.seed, "noise"))
    except NoiseSpecError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(ctx.path(NOISY_CSV), noisy.data)
    write_flip_log(ctx.path(FLIPS_CSV), noisy)
    per_class = np.bincount(noisy.data.true[noisy.flipped], minlength=data.n_classes)
    summary = {"kind": "none" if spec is None else spec.kind, "rate": 0.0 if spec is None else spec.rate,
               "n": len(data), "n_flipped": int(noisy.flipped.sum()), "realized_rate": noisy.realized_rate,
               "flips_by_true_class": [int(v) for v in per_class]}
    write_json(ctx.path("noise_summary.json"), summary)
    write_json(ctx.path("corrupt_manifest.json"), ctx.manifest(
        "corrupt", inputs={TRAIN_CSV: sha256_files(ctx.path(TRAIN_CSV))},
        content_hash=sha256_files(ctx.path(NOISY_CSV), ctx.path(FLIPS_CSV))))
    log.info("corrupt: %d of %d labels flipped (%.4f)", summary["n_flipped"], summary["n"], summary["realized_rate"])
    return EXIT_OK


def cmd_train(ctx: Context) -> int:
    data = ctx.read(NOISY_CSV)
    test = ctx.read(TEST_CSV) if ctx.path(TEST_CSV).exists() else None
    run_cfg = train_config(ctx.cfg, ctx.seed, ctx.method)
    noisy = NoisyDataset(data, data.given != data.true) if data.true is not None else None
    ckpt = ctx.path(CHECKPOINT)
    meta = {"method": run_cfg.method, "seed": ctx.seed}

    def on_epoch(epoch, params):
        save_checkpoint(ckpt, params, {**meta, "epoch": epoch})

    with open(ctx.path(METRICS), "w", encoding="utf-8", newline="\n") as sink:
        result = train(data.train_view(), run_cfg, Monitor(noisy, test, sink), on_epoch)
    save_checkpoint(ckpt, result.params, {**meta, "epoch": run_cfg.total_epochs - 1})
    write_verdicts_csv(ctx.path(VERDICTS_CSV), result.verdicts, data.given, data.true)
    outputs = [ctx.path(METRICS), ctx.path(VERDICTS_CSV)]
    if ctx.cfg.get("pseudo.enabled", False):
        with open(ctx.path("pseudo_metrics.ndjson"), "w", encoding="utf-8", newline="\n") as sink:
            pres = pseudo_label_train(data.train_view(), result.verdicts, run_cfg, Monitor(noisy, test, sink))
        save_checkpoint(ctx.path("pseudo_checkpoint.bin"), pres.params, {**meta, "stage": "pseudo"})
        outputs.append(ctx.path("pseudo_metrics.ndjson"))
    write_json(ctx.path("train_manifest.json"), ctx.manifest(
        "train", inputs={NOISY_CSV: sha256_files(ctx.path(NOISY_CSV))},
        content_hash=sha256_files(*outputs)))
    last = result.metrics[-1] if result.metrics else {}
    log.info("train[%s]: test_acc=%s ap_clean=%s", run_cfg.method, last.get("test_acc"), last.get("ap_clean"))
    return EXIT_OK


def cmd_eval(ctx: Context) -> int:
    vp, fp = ctx.path(VERDICTS_CSV), ctx.path(FLIPS_CSV)
    for p in (vp, fp):
        if not p.exists():
            raise FileNotFoundError(f"{p} not found")
    flips = read_flip_log(fp)
    records = [FilterRecord(v["sample_id"], v["clean_score"], v["p_comp_max"], v["sample_id"] not in flips)
               for v in read_verdicts_csv(vp)]
    hist = export_distribution_histogram(records, ctx.cfg.get("eval.bins", 20))
    write_histogram_csv(ctx.path("histogram.csv"), hist)
    res = ap_result(records)
    write_json(ctx.path("ap.json"), {"ap_clean_positive": res.ap_clean_positive,
                                     "ap_noisy_positive": res.ap_noisy_positive,
                                     "n_clean": res.n_clean, "n_noisy": res.n_noisy})
    log.info("eval: AP clean=%.4f noisy=%.4f", res.ap_clean_positive, res.ap_noisy_positive)
    return EXIT_OK


def cmd_pipeline(ctx: Context) -> int:
    for step in (cmd_gen, cmd_corrupt, cmd_train, cmd_eval):
        step(ctx)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "corrupt": cmd_corrupt, "train": cmd_train, "eval": cmd_eval,
            "pipeline": cmd_pipeline}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jnpl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--out", help="run directory (overrides the config's out key)")
        p.add_argument("--seed", type=int, help="overrides the config's seed")
        p.add_argument("--force", action="store_true", help="overwrite existing generated data")
        p.add_argument("--method", choices=("jnpl", "nlnl", "pl", "nlplus"))
        p.add_argument("--scale", choices=("desk", "paper"))
        if name == "pipeline":
            p.add_argument("--seeds", help="comma-separated seeds; one sub-directory per seed")
    return parser


def _context(args, seed=None, out=None) -> Context:
    cfg = load_config(args.config)
    if args.scale:
        cfg.values["scale"] = args.scale
    out = out or (Path(args.out).resolve() if args.out else None)
    if out is None:
        out = Path(cfg.require("out"))
    if seed is None:
        seed = args.seed if args.seed is not None else cfg.require("seed")
    cfg.values["seed"] = seed
    return Context(cfg, Path(out), seed, args.force, args.method)


def _run_one(args, seed, out) -> int:
    return _guarded(lambda: COMMANDS[args.command](_context(args, seed, out)))


def _guarded(fn) -> int:
    try:
        return fn()
    except (ConfigError, NoiseSpecError, FileExistsError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except UndefinedMetric as exc:
        log.error("undefined metric: %s", exc)
        return EXIT_UNDEFINED
    except (TrainingDiverged, InvalidInput, PipelineError, FloatingPointError) as exc:
        log.error("numeric failure: %s (last good checkpoint kept)", exc)
        return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "pipeline" and args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            log.error("config error: --seeds must be comma-separated integers")
            return EXIT_CONFIG
        base = _guarded(lambda: _context(args, seed=seeds[0]).out)
        if isinstance(base, int):
            return base
        outs = [base / f"seed-{s}" for s in seeds]
        workers = max(1, int(os.environ.get("NLL_THREADS", "1")))
        if workers == 1:
            codes = [_run_one(args, s, o) for s, o in zip(seeds, outs)]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                codes = list(pool.map(_run_one, [args] * len(seeds), seeds, outs))
        return max(codes)
    return _guarded(lambda: COMMANDS[args.command](_context(args)))


if __name__ == "__main__":
    sys.exit(main())
