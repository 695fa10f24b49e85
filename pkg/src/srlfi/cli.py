"""Command-line experiment runner.

Artifacts live under ``--out`` (default: the config's ``out_dir``)::

    data/seed{S}_train.bin, data/seed{S}_test.bin
    {method}/seed{S}/generator.ckpt, history.csv, metrics.csv, sbc_ranks.csv
    metrics.csv, summary.csv, manifest.json

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .estimators import build_rule
from .io import (CorruptFileError, FormatVersionError, export_dataset_csv, load_checkpoint,
                 load_dataset, save_checkpoint, save_dataset)
from .metrics import MetricsReport, c2st_accuracy, evaluate_posterior, sbc_ks_pvalues, sbc_ranks
from .networks import make_critic, make_generator
from .simulators import Dataset, SimulatorModel, generate_dataset, get_model
from .training import (GANTrainConfig, NonFiniteLossError, SRTrainConfig, train_gan, train_sr,
                       write_history_csv)

__all__ = ["emit_report", "main", "run_experiment"]

logger = logging.getLogger("srlfi")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
REPORT_COLUMNS = ["method", "model", "n_train", "m", "metric", "component", "value"]


# --- seeds and paths ----------------------------------------------------------


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def _data_paths(out: Path, seed: int) -> tuple[Path, Path]:
    return out / "data" / f"seed{seed}_train.bin", out / "data" / f"seed{seed}_test.bin"


def _cell_dir(out: Path, method: str, seed: int) -> Path:
    return out / method / f"seed{seed}"


# --- pipeline steps -------------------------------------------------------------


def step_simulate(cfg: ExperimentConfig, model: SimulatorModel, seed: int, out: Path):
    train_path, test_path = _data_paths(out, seed)
    train_path.parent.mkdir(parents=True, exist_ok=True)
    train = generate_dataset(model, cfg.n_train, seed)
    test = generate_dataset(model, cfg.n_test, _stream_seed(seed, 1))
    save_dataset(train, train_path)
    save_dataset(test, test_path)
    return train, test


def _load_or_simulate(cfg, model, seed, out):
    train_path, test_path = _data_paths(out, seed)
    if train_path.exists() and test_path.exists():
        return load_dataset(train_path), load_dataset(test_path)
    return step_simulate(cfg, model, seed, out)


def step_train(cfg: ExperimentConfig, model: SimulatorModel, method: str, seed: int,
               train: Dataset, out: Path):
    bounds = model.bounds if (cfg.bounded_output and model.bounds is not None) else None
    g = make_generator(model.parameter_dim, model.data_dim, hidden=cfg.hidden,
                       latent_dim=cfg.latent_dim, activation=cfg.activation,
                       bounds=bounds, seed=seed)
    if method == "gan":
        critic = make_critic(model.parameter_dim, model.data_dim, hidden=cfg.critic_hidden,
                             activation=cfg.activation, seed=_stream_seed(seed, 2))
        tcfg = GANTrainConfig(generator_lr=cfg.learning_rate, critic_lr=cfg.critic_lr,
                              critic_steps=cfg.critic_steps, batch_size=cfg.batch_size,
                              max_epochs=cfg.max_epochs, early_stopping=cfg.early_stopping,
                              patience=cfg.patience, validation_fraction=cfg.validation_fraction,
                              seed=seed)
        result = train_gan(g, critic, train, tcfg)
    else:
        rule = build_rule(method, cfg.beta, cfg.gamma, model.grid, cfg.patch_size,
                          cfg.patch_step, cfg.w1, cfg.w2)
        tcfg = SRTrainConfig(scoring_rule=rule, m=cfg.m, batch_size=cfg.batch_size,
                             learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs,
                             early_stopping=cfg.early_stopping, patience=cfg.patience,
                             validation_fraction=cfg.validation_fraction, seed=seed)
        result = train_sr(g, train, tcfg)
    cell = _cell_dir(out, method, seed)
    cell.mkdir(parents=True, exist_ok=True)
    summary = {"method": method, "seed": seed, "epochs": result.stopped_epoch,
               "best_epoch": result.best_epoch,
               "final_val_loss": result.history[-1].val_loss if result.history else None}
    if result.rule is not None:
        gamma = (result.rule.base or result.rule).gamma
        if gamma is not None:
            summary["gamma"] = gamma
    save_checkpoint(result.generator, cell / "generator.ckpt", summary, cfg.digest())
    write_history_csv(result.history, cell / "history.csv")
    return result


def step_evaluate(cfg: ExperimentConfig, model: SimulatorModel, g, test: Dataset, seed: int,
                  early_stop_epoch: int | None = None) -> MetricsReport:
    rng = np.random.default_rng(_stream_seed(seed, 3))
    samples = g.sample(test.y, cfg.n_post, rng).data
    report = evaluate_posterior(test.theta, samples)
    report.early_stop_epoch = early_stop_epoch
    if cfg.sbc_priors > 0:
        sampler = lambda y, n, r: g.sample(np.asarray(y)[None, :], n, r).data[0]  # noqa: E731
        ranks = sbc_ranks(model, sampler, cfg.sbc_priors, cfg.sbc_draws, _stream_seed(seed, 4))
        report.sbc_pvalues = sbc_ks_pvalues(ranks, seed)
        report.extras["_ranks"] = ranks
    if cfg.c2st_observations > 0 and model.has_reference_posterior:
        accs = []
        for i in range(cfg.c2st_observations):
            y0 = test.y[i]
            obs_rng = np.random.default_rng(_stream_seed(seed, 100 + i))
            ref = model.posterior_sampler(y0, cfg.c2st_samples, obs_rng)
            approx = g.sample(y0[None, :], cfg.c2st_samples, obs_rng).data[0]
            accs.append(c2st_accuracy(ref, approx, seed=seed))
        report.c2st = float(np.mean(accs))
    return report


def _write_ranks(ranks, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"rank_{j}" for j in range(ranks.ranks.shape[1])])
        writer.writerows(ranks.ranks.tolist())


def _report_rows(cfg: ExperimentConfig, method: str, report: MetricsReport) -> list[dict]:
    rows = []
    for metric, component, value in report.rows():
        if metric.startswith("_"):
            continue
        rows.append({"method": method, "model": cfg.model, "n_train": cfg.n_train,
                     "m": cfg.m if method != "gan" else 1, "metric": metric,
                     "component": component, "value": value})
    return rows


def _write_rows(rows: list[dict], path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "value": repr(float(r["value"]))})


def run_cell(cfg: ExperimentConfig, method: str, seed: int, out: Path) -> dict:
    model = get_model(cfg.model, **cfg.model_options)
    start = time.perf_counter()
    train, test = _load_or_simulate(cfg, model, seed, out)
    result = step_train(cfg, model, method, seed, train, out)
    report = step_evaluate(cfg, model, result.generator, test, seed,
                           result.best_epoch if cfg.early_stopping else None)
    cell = _cell_dir(out, method, seed)
    ranks = report.extras.pop("_ranks", None)
    if ranks is not None:
        _write_ranks(ranks, cell / "sbc_ranks.csv")
    rows = _report_rows(cfg, method, report)
    _write_rows(rows, cell / "metrics.csv")
    wall = time.perf_counter() - start
    logger.info("%s seed %d done in %.1fs", method, seed, wall)
    return {"method": method, "seed": seed, "rows": rows, "wall_time_sec": wall,
            "train_time_sec": result.wall_time_sec, "epochs": result.stopped_epoch}


def emit_report(rows: list[dict], path) -> list[dict]:
    """Write the long-format metrics CSV and a mean/sd summary next to it.

    Returns the summary rows (sorted by method, then metric and component).
    """
    if not rows:
        raise ValueError("no runs to report")
    path = Path(path)
    key = lambda r: (r["method"], r["model"], int(r["n_train"]), int(r["m"]),  # noqa: E731
                     r["metric"], r["component"])
    ordered = sorted(rows, key=key)
    _write_rows(ordered, path)
    groups: dict[tuple, list[float]] = {}
    for r in ordered:
        groups.setdefault(key(r), []).append(float(r["value"]))
    summary = []
    for k, values in groups.items():
        v = np.asarray(values)
        sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        summary.append(dict(zip(REPORT_COLUMNS[:-1], k), mean=float(v.mean()), sd=sd,
                            n_runs=len(v)))
    with open(path.with_name("summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS[:-1] + ["mean", "sd", "n_runs"])
        writer.writeheader()
        for s in summary:
            writer.writerow({**s, "mean": repr(s["mean"]), "sd": repr(s["sd"])})
    return summary


def format_summary(summary: list[dict]) -> str:
    metrics = ("nrmse", "calibration_error", "r2", "c2st")
    table: dict[str, dict[str, str]] = {}
    for s in summary:
        if s["component"] == "mean" and s["metric"] in metrics:
            table.setdefault(s["method"], {})[s["metric"]] = f"{s['mean']:.3f} ± {s['sd']:.3f}"
    present = [m for m in metrics if any(m in row for row in table.values())]
    lines = ["method".ljust(16) + "".join(m.ljust(22) for m in present)]
    for method in sorted(table):
        lines.append(method.ljust(16) + "".join(table[method].get(m, "-").ljust(22) for m in present))
    return "\n".join(lines)


def _versions() -> dict:
    import scipy
    import sklearn
    return {"srlfi": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def run_experiment(config_path, seed: int | None = None, out: str | None = None,
                   threads: int = 1) -> Path:
    """Full protocol: simulate, train every (method, seed) cell, evaluate, report."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(seed,))
    out_dir = Path(out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = get_model(cfg.model, **cfg.model_options)
    start = time.perf_counter()
    for s in cfg.seeds:
        _load_or_simulate(cfg, model, s, out_dir)
    cells = [(method, s) for method in cfg.methods for s in cfg.seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: run_cell(cfg, c[0], c[1], out_dir), cells))
    else:
        results = [run_cell(cfg, method, s, out_dir) for method, s in cells]
    rows = [r for res in results for r in res["rows"]]
    summary = emit_report(rows, out_dir / "metrics.csv")
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "versions": _versions(),
        "cells": [{k: v for k, v in res.items() if k != "rows"} for res in results],
        "wall_time_sec": time.perf_counter() - start,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(format_summary(summary))
    return out_dir


# --- argument parsing ----------------------------------------------------------


def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="experiment config (.ini or manifest .json)")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed list")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent cells")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srlfi", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="simulate, train, evaluate and report"))
    p = sub.add_parser("simulate", help="generate train/test datasets")
    _common(p)
    p.add_argument("--csv", action="store_true", help="also export CSV copies")
    _common(sub.add_parser("train", help="train generators on persisted datasets"))
    _common(sub.add_parser("evaluate", help="evaluate persisted checkpoints"))
    _common(sub.add_parser("sbc", help="simulation-based calibration ranks for checkpoints"))
    p = sub.add_parser("c2st", help="classifier two-sample test")
    _common(p, config_required=False)
    p.add_argument("--samples-a", help="CSV of samples (header row, one draw per row)")
    p.add_argument("--samples-b", help="CSV of samples to compare against")
    p = sub.add_parser("report", help="aggregate metrics CSVs into a summary")
    p.add_argument("inputs", nargs="+", help="metrics CSV files")
    p.add_argument("--out", required=True, help="output metrics CSV path")
    return parser


def _seeds_of(cfg: ExperimentConfig, seed: int | None):
    return (seed,) if seed is not None else cfg.seeds


def _read_csv_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _dispatch(args) -> int:
    if args.command == "report":
        rows = []
        for path in args.inputs:
            with open(path, newline="") as fh:
                rows.extend(csv.DictReader(fh))
        print(format_summary(emit_report(rows, args.out)))
        return EXIT_OK
    if args.command == "c2st" and args.samples_a:
        if not args.samples_b:
            raise ConfigError("c2st: --samples-b is required with --samples-a")
        acc = c2st_accuracy(_read_csv_matrix(args.samples_a), _read_csv_matrix(args.samples_b),
                            seed=args.seed or 0)
        print(f"c2st_accuracy {acc:.4f}")
        return EXIT_OK
    if args.config is None:
        raise ConfigError("--config is required")
    if args.command == "run":
        run_experiment(args.config, args.seed, args.out, args.threads)
        return EXIT_OK

    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    model = get_model(cfg.model, **cfg.model_options)
    for seed in _seeds_of(cfg, args.seed):
        if args.command == "simulate":
            train, test = step_simulate(cfg, model, seed, out)
            if args.csv:
                train_path, test_path = _data_paths(out, seed)
                export_dataset_csv(train, train_path.with_suffix(".csv"))
                export_dataset_csv(test, test_path.with_suffix(".csv"))
            continue
        train, test = _load_or_simulate(cfg, model, seed, out)
        for method in cfg.methods:
            cell = _cell_dir(out, method, seed)
            if args.command == "train":
                step_train(cfg, model, method, seed, train, out)
                continue
            g, header = load_checkpoint(cell / "generator.ckpt")
            if args.command == "evaluate":
                report = step_evaluate(cfg, model, g, test, seed)
                ranks = report.extras.pop("_ranks", None)
                if ranks is not None:
                    _write_ranks(ranks, cell / "sbc_ranks.csv")
                _write_rows(_report_rows(cfg, method, report), cell / "metrics.csv")
            elif args.command == "sbc":
                sampler = lambda y, n, r: g.sample(np.asarray(y)[None, :], n, r).data[0]  # noqa: E731
                ranks = sbc_ranks(model, sampler, cfg.sbc_priors, cfg.sbc_draws,
                                  _stream_seed(seed, 4))
                _write_ranks(ranks, cell / "sbc_ranks.csv")
                pvals = sbc_ks_pvalues(ranks, seed)
                print(f"{method} seed {seed} sbc ks p-values: {np.array2string(pvals, precision=4)}")
            elif args.command == "c2st":
                if not model.has_reference_posterior:
                    raise ConfigError(f"experiment.model: {cfg.model} has no reference posterior")
                rng = np.random.default_rng(_stream_seed(seed, 100))
                y0 = test.y[0]
                ref = model.posterior_sampler(y0, cfg.c2st_samples, rng)
                approx = g.sample(y0[None, :], cfg.c2st_samples, rng).data[0]
                print(f"{method} seed {seed} c2st_accuracy {c2st_accuracy(ref, approx, seed=seed):.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorruptFileError, FormatVersionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
