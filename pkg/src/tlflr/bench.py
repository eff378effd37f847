"""Monte Carlo benchmark harness and the real-data protocol.

Every repetition draws its data from a sub-seed that is a pure function of
(master seed, repetition), so all methods within a repetition see the same
sample; method-level randomness (CV folds, splits) additionally hashes the
method index. Results land in a fixed-schema CSV that reproduces
byte-for-byte under the same configuration (timing collection is off by
default for that reason).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptive import adaptive_fit
from .dataio import load_sector_dataset
from .errors import ConfigError, TlflrError
from .funcore import Grid
from .modelsel import CVConfig, cross_validate, default_m_grid, default_tau_grid
from .regress import SlopeEstimate, _warm_kernel, fit_flr, fit_tlflr
from .synth import (
    SyntheticConfig,
    default_grid_size,
    generate_sources,
    generate_target,
    mise,
)

METHOD_FLR = "FLR"
METHOD_ORACLE = "TL-FLR"
METHOD_NAIVE = "Naive TL-FLR"
METHOD_AGG = "Agg TL-FLR"
ALL_METHODS = (METHOD_FLR, METHOD_ORACLE, METHOD_NAIVE, METHOD_AGG)
_METHOD_INDEX = {name: i for i, name in enumerate(ALL_METHODS)}

RESULTS_HEADER = ("scenario", "method", "rep", "seed", "metric", "value", "m", "tau", "millis")


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one harness invocation (flags or config file)."""

    scenario: str = "bench"
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    grid_size: int | None = None
    repetitions: int = 1
    master_seed: int = 0
    output_dir: str | None = None
    methods: tuple[str, ...] = ALL_METHODS
    folds: int = 5
    m_max: int | None = None
    split_fraction: float = 0.5
    jobs: int = 1
    timing: bool = False
    data_dir: str | None = None
    targets: tuple[str, ...] | None = None
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        methods = tuple(self.methods)
        for m in methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {ALL_METHODS}")
        object.__setattr__(self, "methods", methods)
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must be in (0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class ResultRow:
    """One benchmark measurement (or error marker) in the results CSV."""

    scenario: str
    method: str
    rep: int
    seed: int
    metric: str
    value: float | str
    m: int | None
    tau: float | None
    millis: int

    def as_csv(self) -> list[str]:
        return [
            self.scenario,
            self.method,
            str(self.rep),
            str(self.seed),
            self.metric,
            self.value if isinstance(self.value, str) else repr(float(self.value)),
            "" if self.m is None else str(self.m),
            "" if self.tau is None else repr(float(self.tau)),
            str(self.millis),
        ]


def derive_seed(*parts: int) -> int:
    """Deterministic 64-bit sub-seed from integer components."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def _cv_config(config: RunConfig, n: int, grid_size: int, seed: int) -> CVConfig:
    cap = config.m_max if config.m_max is not None else 20
    return CVConfig(
        folds=config.folds,
        m_grid=tuple(default_m_grid(n, grid_size, cap)),
        tau_grid=tuple(default_tau_grid(n)),
        seed=seed,
    )


def _fit_with_cv(target, sources, cv: CVConfig) -> SlopeEstimate:
    if sources:
        report = cross_validate(target, sources, cv, "TL-FLR")
        return fit_tlflr(target, sources, report.best_m, report.best_tau)
    report = cross_validate(target, [], cv, "FLR")
    return fit_flr(target, report.best_m)


def _scenario_id(synth: SyntheticConfig) -> str:
    return (
        f"model-{synth.model}-h{synth.h:g}-s{synth.s}-K{synth.K}"
        f"-{synth.score_dist}"
    )


def _bench_rep(config: RunConfig, rep: int) -> list[ResultRow]:
    data_seed = derive_seed(config.master_seed, rep)
    synth = replace(config.synth, seed=data_seed)
    grid = Grid.uniform(config.grid_size or default_grid_size(synth.model))
    target, truth = generate_target(synth, grid)
    sources, infos = generate_sources(synth, grid, truth)
    oracle_sources = [s for s, i in zip(sources, infos) if i.informative]
    scenario = _scenario_id(synth)
    rows = []
    for method in config.methods:
        method_seed = derive_seed(config.master_seed, rep, _METHOD_INDEX[method])
        cv = _cv_config(config, target.n, grid.size, method_seed)
        start = time.perf_counter()
        try:
            if method == METHOD_FLR:
                estimate = _fit_with_cv(target, [], cv)
            elif method == METHOD_ORACLE:
                estimate = _fit_with_cv(target, oracle_sources, cv)
            elif method == METHOD_NAIVE:
                estimate = _fit_with_cv(target, sources, cv)
            else:
                result = adaptive_fit(
                    target,
                    sources,
                    config.split_fraction,
                    seed=method_seed,
                    tuning=_cv_config(
                        config,
                        int(np.ceil(target.n * config.split_fraction)),
                        grid.size,
                        method_seed,
                    ),
                )
                estimate = result.candidates[result.chosen[0]]
                value = mise(result.aggregate, truth)
                rows.append(
                    _row(scenario, method, rep, data_seed, "mise", value, estimate, start, config)
                )
                continue
            rows.append(
                _row(
                    scenario, method, rep, data_seed, "mise",
                    mise(estimate, truth), estimate, start, config,
                )
            )
        except TlflrError as exc:
            rows.append(
                ResultRow(
                    scenario, method, rep, data_seed,
                    "error", type(exc).__name__, None, None,
                    _elapsed_ms(start, config),
                )
            )
    return rows


def _elapsed_ms(start: float, config: RunConfig) -> int:
    return int(round(1000 * (time.perf_counter() - start))) if config.timing else 0


def _row(scenario, method, rep, seed, metric, value, estimate, start, config) -> ResultRow:
    return ResultRow(
        scenario, method, rep, seed, metric, value,
        estimate.m, estimate.tau, _elapsed_ms(start, config),
    )


def _run_parallel(worker, config: RunConfig, reps: int, extra=()) -> list[list[ResultRow]]:
    args = [(config, *extra, rep) for rep in range(reps)]
    if config.jobs == 1:
        return [worker(*a) for a in args]
    _warm_kernel()  # compile before forking so workers inherit the jit
    with ProcessPoolExecutor(max_workers=config.jobs) as pool:
        return list(pool.map(_star, [(worker, a) for a in args]))


def _star(packed):
    worker, args = packed
    return worker(*args)


def write_results_csv(path, rows: list[ResultRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(RESULTS_HEADER)]
    lines += [",".join(r.as_csv()) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_benchmark(config: RunConfig) -> list[ResultRow]:
    """Run the synthetic benchmark; one row per (method, repetition).

    Per-repetition method failures become rows with metric ``error`` and
    the exception name in the value column; they never abort the run.
    Writes ``results.csv`` under `output_dir` when set.
    """
    per_rep = _run_parallel(_bench_rep, config, config.repetitions)
    rows = [row for rep_rows in per_rep for row in rep_rows]
    if config.output_dir:
        write_results_csv(Path(config.output_dir) / "results.csv", rows)
    return rows


def _predict_errors(estimate: SlopeEstimate, dataset) -> np.ndarray:
    w = dataset.grid.trapezoid_weights()
    fitted = estimate.response_mean + (
        dataset.curves - estimate.curve_mean.values
    ) @ (w * estimate.slope_curve.values)
    return dataset.responses - fitted


def _realdata_rep(config: RunConfig, sectors: dict, name: str, rep: int) -> list[ResultRow]:
    target_full = sectors[name]
    others = [ds for other, ds in sectors.items() if other != name]
    sector_index = sorted(sectors).index(name)
    seed = derive_seed(config.master_seed, rep, sector_index)
    rng = np.random.default_rng(seed)
    n = target_full.n
    n_train = min(max(int(round(n * config.train_fraction)), 4), n - 1)
    perm = rng.permutation(n)
    train = target_full.subset(np.sort(perm[:n_train]))
    test = target_full.subset(np.sort(perm[n_train:]))
    rows = []
    results = {}
    methods = (METHOD_FLR,) if not others else (METHOD_FLR, METHOD_NAIVE, METHOD_AGG)
    for method in methods:
        cv = _cv_config(config, train.n, train.grid.size, derive_seed(seed, _METHOD_INDEX[method]))
        start = time.perf_counter()
        try:
            if method == METHOD_FLR:
                estimate = _fit_with_cv(train, [], cv)
            elif method == METHOD_NAIVE:
                estimate = _fit_with_cv(train, others, cv)
            else:
                agg = adaptive_fit(
                    train, others, config.split_fraction, seed=seed,
                    tuning=_cv_config(
                        config,
                        int(np.ceil(train.n * config.split_fraction)),
                        train.grid.size,
                        derive_seed(seed, _METHOD_INDEX[method]),
                    ),
                )
                estimate = agg.aggregate
            err = _predict_errors(estimate, test)
            mspe = float(err @ err) / err.size
            results[method] = mspe
            rows.append(
                ResultRow(
                    name, method, rep, seed, "mspe", mspe,
                    estimate.m, estimate.tau, _elapsed_ms(start, config),
                )
            )
        except TlflrError as exc:
            rows.append(
                ResultRow(
                    name, method, rep, seed, "error", type(exc).__name__,
                    None, None, _elapsed_ms(start, config),
                )
            )
    flr = results.get(METHOD_FLR)
    if flr is not None and flr > 0:
        for method in (METHOD_NAIVE, METHOD_AGG):
            if method in results:
                rows.append(
                    ResultRow(
                        name, method, rep, seed, "rel_mspe",
                        results[method] / flr, None, None, 0,
                    )
                )
    return rows


def run_realdata(config: RunConfig) -> list[ResultRow]:
    """Real-data protocol: each configured sector in turn is the target,
    all other sectors are sources; random train/test splits per repetition,
    reporting test mean squared prediction error and its ratio to the
    target-only baseline."""
    if not config.data_dir:
        raise ConfigError("realdata needs data_dir pointing at per-sector stock CSVs")
    data_dir = Path(config.data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"{data_dir} is not a directory")
    grid = Grid.uniform(config.grid_size or 100)
    files = sorted(data_dir.glob("*.csv"))
    sectors = {f.stem: load_sector_dataset(f, grid) for f in files}
    if not sectors:
        raise ConfigError(f"no sector CSV files in {data_dir}")
    targets = config.targets if config.targets else tuple(sorted(sectors))
    for name in targets:
        if name not in sectors:
            raise ConfigError(f"sector {name!r} has no CSV file in {data_dir}")
    rows = []
    for name in targets:
        per_rep = _run_parallel(
            _realdata_rep, config, config.repetitions, extra=(sectors, name)
        )
        rows += [row for rep_rows in per_rep for row in rep_rows]
    if config.output_dir:
        write_results_csv(Path(config.output_dir) / "results.csv", rows)
    return rows
