"""Command-line driver.

Subcommands: ``simulate`` (write synthetic curve CSVs), ``fit`` (two-step
transfer fit from curve CSVs), ``adaptive`` (adaptive aggregation fit),
``bench`` (Monte Carlo benchmark), ``realdata`` (per-sector stock
protocol). A JSON config file mirroring the RunConfig field names can set
any value; explicit flags override the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptive import adaptive_fit
from .bench import (
    ALL_METHODS,
    RunConfig,
    run_benchmark,
    run_realdata,
    write_results_csv,
)
from .dataio import load_curves_csv, save_curves_csv
from .errors import ConfigError, TlflrError
from .funcore import Grid
from .modelsel import CVConfig, cross_validate, default_m_grid, default_tau_grid
from .regress import fit_flr, fit_tlflr
from .synth import (
    SyntheticConfig,
    default_grid_size,
    generate_sources,
    generate_target,
)

_SYNTH_FLAGS = {
    "model": "model",
    "h": "h",
    "s": "s",
    "K": "K",
    "alpha": "alpha",
    "beta": "beta",
    "n": "n",
    "nl": "n_l",
    "L": "L",
    "sigma_eps": "sigma_eps",
    "score_dist": "score_dist",
    "truncation": "truncation",
}

_RUN_FLAGS = {
    "reps": "repetitions",
    "seed": "master_seed",
    "out": "output_dir",
    "jobs": "jobs",
    "folds": "folds",
    "m_max": "m_max",
    "split_fraction": "split_fraction",
    "timing": "timing",
    "grid_size": "grid_size",
    "data_dir": "data_dir",
    "train_fraction": "train_fraction",
}


def _add_synth_flags(p):
    p.add_argument("--model", choices=("I", "II", "III", "IV"), help="scenario model")
    p.add_argument("--h", type=float, help="contrast magnitude")
    p.add_argument("--s", type=int, help="contrast support size (model I)")
    p.add_argument("--K", type=int, help="number of informative sources")
    p.add_argument("--alpha", type=float, help="eigenvalue decay exponent")
    p.add_argument("--beta", type=float, help="slope coefficient decay exponent")
    p.add_argument("--n", type=int, help="target sample size")
    p.add_argument("--nl", type=int, help="per-source sample size")
    p.add_argument("--L", type=int, help="number of sources")
    p.add_argument("--sigma-eps", dest="sigma_eps", type=float, help="noise sd")
    p.add_argument("--score-dist", dest="score_dist", choices=("uniform", "gaussian", "t5"))
    p.add_argument("--truncation", type=int, help="basis truncation of the generator")


def _add_run_flags(p, reps=False):
    p.add_argument("--config", help="JSON file mirroring RunConfig fields")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel repetition workers")
    p.add_argument("--grid-size", dest="grid_size", type=int, help="grid points")
    p.add_argument("--folds", type=int, help="cross-validation folds")
    p.add_argument("--m-max", dest="m_max", type=int, help="largest truncation level searched")
    if reps:
        p.add_argument("--reps", type=int, help="number of repetitions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlflr",
        description="Transfer learning for slope estimation in functional linear regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one synthetic dataset as curve CSVs")
    _add_run_flags(p)
    _add_synth_flags(p)

    p = sub.add_parser("fit", help="two-step transfer fit from curve CSVs")
    _add_run_flags(p)
    p.add_argument("--target", required=True, help="target curve CSV")
    p.add_argument("--source", action="append", default=[], help="source curve CSV (repeatable)")
    p.add_argument("--m", type=int, help="truncation level (default: 5-fold CV)")
    p.add_argument("--tau", type=float, help="lasso penalty (default: 5-fold CV)")

    p = sub.add_parser("adaptive", help="adaptive aggregation fit from curve CSVs")
    _add_run_flags(p)
    p.add_argument("--target", required=True, help="target curve CSV")
    p.add_argument("--source", action="append", default=[], help="source curve CSV (repeatable)")
    p.add_argument("--split-fraction", dest="split_fraction", type=float)

    p = sub.add_parser("bench", help="synthetic Monte Carlo benchmark")
    _add_run_flags(p, reps=True)
    _add_synth_flags(p)
    p.add_argument("--methods", help="comma-separated subset of: " + ", ".join(ALL_METHODS))
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--timing", action="store_const", const=True, default=None,
                   help="record wall time (breaks byte-identical reruns)")

    p = sub.add_parser("realdata", help="per-sector stock prediction protocol")
    _add_run_flags(p, reps=True)
    p.add_argument("--data-dir", dest="data_dir", help="directory of per-sector stock CSVs")
    p.add_argument("--targets", help="comma-separated target sectors (default: all)")
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--timing", action="store_const", const=True, default=None)

    return parser


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _build_run_config(args) -> RunConfig:
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    synth_cfg = dict(file_cfg.get("synth", {}))
    for flag, field in _SYNTH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            synth_cfg[field] = value
    run_cfg = {k: v for k, v in file_cfg.items() if k != "synth"}
    for flag, field in _RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            run_cfg[field] = value
    methods = getattr(args, "methods", None)
    if methods is not None:
        run_cfg["methods"] = tuple(m.strip() for m in methods.split(","))
    elif "methods" in run_cfg:
        run_cfg["methods"] = tuple(run_cfg["methods"])
    targets = getattr(args, "targets", None)
    if targets is not None:
        run_cfg["targets"] = tuple(t.strip() for t in targets.split(","))
    elif run_cfg.get("targets") is not None:
        run_cfg["targets"] = tuple(run_cfg["targets"])
    try:
        synth = SyntheticConfig(**synth_cfg)
        return RunConfig(scenario=args.command, synth=synth, **run_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad configuration field: {exc}") from None
    except TlflrError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(config: RunConfig) -> Path:
    if not config.output_dir:
        raise ConfigError("this command needs --out (or output_dir in the config file)")
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_curve_csv(path, grid: Grid, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in zip(grid.points, values):
            writer.writerow([repr(float(t)), repr(float(v))])


def _cmd_simulate(config: RunConfig) -> int:
    out = _out_dir(config)
    synth = replace(config.synth, seed=config.master_seed)
    grid = Grid.uniform(config.grid_size or default_grid_size(synth.model))
    target, truth = generate_target(synth, grid)
    sources, _ = generate_sources(synth, grid, truth)
    save_curves_csv(out / "target.csv", target)
    for l, src in enumerate(sources):
        save_curves_csv(out / f"source_{l:02d}.csv", src)
    _write_curve_csv(out / "true_slope.csv", grid, truth.slope.values)
    print(f"wrote target, {len(sources)} sources, and true slope to {out}")
    return 0


def _cv_config_for(config: RunConfig, n: int, grid_size: int) -> CVConfig:
    cap = config.m_max if config.m_max is not None else 20
    return CVConfig(
        folds=config.folds,
        m_grid=tuple(default_m_grid(n, grid_size, cap)),
        tau_grid=tuple(default_tau_grid(n)),
        seed=config.master_seed,
    )


def _cmd_fit(config: RunConfig, args) -> int:
    out = _out_dir(config)
    target = load_curves_csv(args.target)
    sources = [load_curves_csv(p) for p in args.source]
    m, tau = args.m, args.tau
    report = None
    if m is None or tau is None:
        cv = _cv_config_for(config, target.n, target.grid.size)
        report = cross_validate(target, sources, cv, "TL-FLR" if sources else "FLR")
        m = m if m is not None else report.best_m
        tau = tau if tau is not None else report.best_tau
    estimate = fit_tlflr(target, sources, m, tau) if sources else fit_flr(target, m)
    _write_curve_csv(out / "slope.csv", target.grid, estimate.slope_curve.values)
    summary = {
        "method": "TL-FLR" if sources else "FLR",
        "m": int(m),
        "tau": float(tau),
        "response_mean": estimate.response_mean,
        "n_target": target.n,
        "n_sources": [src.n for src in sources],
        "cv_used": report is not None,
    }
    (out / "fit.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"wrote slope.csv and fit.json to {out} (m={m}, tau={tau:g})")
    return 0


def _cmd_adaptive(config: RunConfig, args) -> int:
    out = _out_dir(config)
    target = load_curves_csv(args.target)
    sources = [load_curves_csv(p) for p in args.source]
    n1 = int(np.ceil(target.n * config.split_fraction))
    tuning = _cv_config_for(config, max(n1, 4), target.grid.size)
    result = adaptive_fit(
        target, sources, config.split_fraction, seed=config.master_seed, tuning=tuning
    )
    _write_curve_csv(out / "slope.csv", target.grid, result.aggregate.slope_curve.values)
    l1, l2, lam = result.chosen
    summary = {
        "method": "Agg TL-FLR",
        "chosen": {"l1": l1, "l2": l2, "lambda": lam},
        "empirical_risks": [float(r) for r in result.empirical_risks],
        "zeta": [float(z) for z in result.candidate_sets.zeta],
        "candidate_sets": [list(s) for s in result.candidate_sets.sets],
        "candidate_tuning": [
            {"m": c.m, "tau": c.tau} for c in result.candidates
        ],
    }
    (out / "adaptive.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"wrote slope.csv and adaptive.json to {out} (l1={l1}, l2={l2}, lambda={lam:.3f})")
    return 0


def _cmd_bench(config: RunConfig) -> int:
    out = _out_dir(config)
    rows = run_benchmark(replace(config, output_dir=str(out)))
    errors = sum(1 for r in rows if r.metric == "error")
    print(f"wrote {len(rows)} rows ({errors} errors) to {out / 'results.csv'}")
    return 0


def _cmd_realdata(config: RunConfig) -> int:
    out = _out_dir(config)
    rows = run_realdata(replace(config, output_dir=str(out)))
    errors = sum(1 for r in rows if r.metric == "error")
    print(f"wrote {len(rows)} rows ({errors} errors) to {out / 'results.csv'}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_run_config(args)
        if args.command == "simulate":
            return _cmd_simulate(config)
        if args.command == "fit":
            return _cmd_fit(config, args)
        if args.command == "adaptive":
            return _cmd_adaptive(config, args)
        if args.command == "bench":
            return _cmd_bench(config)
        return _cmd_realdata(config)
    except TlflrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
