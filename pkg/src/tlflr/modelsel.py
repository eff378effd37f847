"""Tuning-parameter selection by k-fold cross-validation over (m, tau).

Only target rows are folded; source data participate in every fold's
training. Configurations whose fits are numerically degenerate receive
infinite risk instead of aborting the search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IllConditionedError
from .funcore import FunctionalDataset
from .regress import (
    _PooledBasis,
    _TargetDesign,
    _flr_prefix,
    _prep_sources,
    _solve_lasso,
    DEFAULT_LASSO_TOL,
    DEFAULT_MAX_SWEEPS,
)

#: Multipliers of n^{-1/2} forming the default tau grid.
DEFAULT_TAU_SCALES = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)

DEFAULT_M_CAP = 20


def default_m_grid(n: int, grid_size: int, cap: int = DEFAULT_M_CAP) -> list[int]:
    """Truncation levels 1..min(cap, n-2, G-1)."""
    top = min(cap, n - 2, grid_size - 1)
    if top < 1:
        raise DomainError("dataset too small for any truncation level")
    return list(range(1, top + 1))


def default_tau_grid(n: int, scales=DEFAULT_TAU_SCALES) -> list[float]:
    """Penalty levels c * n^{-1/2}; the theory-backed scale, bracketed."""
    return sorted(c / np.sqrt(n) for c in scales)


@dataclass(frozen=True)
class CVConfig:
    """Cross-validation settings; grids left as None are derived from the
    data when `cross_validate` runs."""

    folds: int = 5
    m_grid: tuple[int, ...] | None = None
    tau_grid: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise DomainError("need at least two folds")
        if self.m_grid is not None:
            if len(self.m_grid) == 0 or any(m < 1 for m in self.m_grid):
                raise DomainError("m grid must be nonempty positive integers")
            object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        if self.tau_grid is not None:
            taus = tuple(float(t) for t in self.tau_grid)
            if len(taus) == 0 or any(t < 0 for t in taus):
                raise DomainError("tau grid must be nonempty and nonnegative")
            if any(a > b for a, b in zip(taus, taus[1:])):
                raise DomainError("tau grid must be sorted ascending")
            if taus[0] != 0.0:
                raise DomainError("tau grid must include 0")
            object.__setattr__(self, "tau_grid", taus)


@dataclass(frozen=True, eq=False)
class CVReport:
    """Held-out risk for every (m, tau) pair and the selected pair.

    `risks` holds the mean held-out squared prediction error per pair;
    `risk_se` its standard error across folds (NaN where infeasible).
    """

    m_grid: tuple[int, ...]
    tau_grid: tuple[float, ...]
    risks: np.ndarray
    risk_se: np.ndarray
    best_m: int
    best_tau: float

    @property
    def best(self) -> tuple[int, float]:
        return self.best_m, self.best_tau


def make_folds(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint index sets covering range(n), sizes differing by at most 1."""
    if folds > n:
        raise DomainError(f"cannot split {n} observations into {folds} folds")
    if folds < 1:
        raise DomainError("need at least one fold")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _normalize_estimator(estimator: str) -> str:
    name = estimator.strip().lower().replace("_", "-").replace(" ", "-")
    if name in ("tl-flr", "tlflr"):
        return "tl-flr"
    if name == "flr":
        return "flr"
    raise DomainError(f"unknown estimator {estimator!r}; use 'TL-FLR' or 'FLR'")


def _dense_delta(gram_m, c_m):
    """Least-squares bias correction for tau = 0; errors when singular."""
    try:
        np.linalg.cholesky(gram_m)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("target score Gram is singular at tau = 0") from exc
    return np.linalg.solve(gram_m, c_m)


def cross_validate(
    target: FunctionalDataset,
    sources: list[FunctionalDataset],
    config: CVConfig,
    estimator: str,
    selection: str = "1se",
    tol: float = DEFAULT_LASSO_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    _source_preps=None,
) -> CVReport:
    """Mean held-out squared prediction error over a (m, tau) grid.

    For the transfer estimator the pooled-source basis is fixed across
    folds (sources are never folded), so it is computed once; target
    folds only refit the centering, scores, and bias correction.

    `selection` picks the reported pair: "min" takes the risk minimizer,
    "1se" (default) the most parsimonious pair whose mean risk is within
    one standard error of the minimum. Prediction risk here is nearly
    flat in m once the leading components are in, while the estimation
    error of deep components explodes; the parsimony rule keeps the
    selection off that cliff. Ties always prefer smaller m, then smaller
    tau.
    """
    est = _normalize_estimator(estimator)
    if selection not in ("min", "1se"):
        raise DomainError("selection must be 'min' or '1se'")
    n = target.n
    G = target.grid.size
    m_grid = list(config.m_grid) if config.m_grid is not None else default_m_grid(n, G)
    tau_grid = (
        list(config.tau_grid) if config.tau_grid is not None else default_tau_grid(n)
    )
    folds = make_folds(n, config.folds, config.seed)
    fold_risks = np.zeros((len(folds), len(m_grid), len(tau_grid)))

    if est == "tl-flr":
        if not sources:
            raise DomainError("TL-FLR cross-validation needs source data")
        preps = _source_preps if _source_preps is not None else _prep_sources(sources)
        m_build = min(max(m_grid), G)
        basis = _PooledBasis(preps, target.grid, m_build)
        _accumulate_tlflr_risks(
            fold_risks, basis, target, folds, m_grid, tau_grid, tol, max_sweeps
        )
    else:
        _accumulate_flr_risks(fold_risks, target, folds, m_grid, tau_grid)

    risks = fold_risks.mean(axis=0)
    if not np.any(np.isfinite(risks)):
        raise DomainError("every (m, tau) configuration was infeasible")
    with np.errstate(invalid="ignore"):
        se = np.where(
            np.all(np.isfinite(fold_risks), axis=0),
            fold_risks.std(axis=0, ddof=1) / np.sqrt(len(folds)),
            np.nan,
        )
    best_mi, best_ti = _select_best(risks, se, m_grid, tau_grid, selection)
    return CVReport(
        m_grid=tuple(m_grid),
        tau_grid=tuple(tau_grid),
        risks=risks,
        risk_se=se,
        best_m=m_grid[best_mi],
        best_tau=tau_grid[best_ti],
    )


def _accumulate_tlflr_risks(
    fold_risks, basis, target, folds, m_grid, tau_grid, tol, max_sweeps
):
    n = target.n
    for fi, test_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        design = _TargetDesign(
            basis, target.curves[train_mask], target.responses[train_mask]
        )
        n_tr = design.S.shape[0]
        gram_full = design.S.T @ design.S / n_tr
        gram_full = 0.5 * (gram_full + gram_full.T)
        c_full = design.S.T @ design.yc / n_tr
        S_test = (target.curves[test_idx] - design.x_mean) @ basis.phi_w
        y_test_c = target.responses[test_idx] - design.y_mean
        for mi, m in enumerate(m_grid):
            if m > basis.eigen.size or m > basis.m_valid:
                fold_risks[fi, mi, :] = np.inf
                continue
            w_m = basis.w_hat[:m]
            gram_m = np.ascontiguousarray(gram_full[:m, :m])
            c_m = c_full[:m] - gram_m @ w_m
            rr = design.yc - design.S[:, :m] @ w_m
            yy = float(rr @ rr) / n_tr
            base_err = y_test_c - S_test[:, :m] @ w_m
            for ti, tau in enumerate(tau_grid):
                try:
                    if tau == 0.0:
                        delta = _dense_delta(gram_m, c_m)
                    else:
                        delta = _solve_lasso(gram_m, c_m, yy, tau, tol, max_sweeps)[0]
                except IllConditionedError:
                    fold_risks[fi, mi, ti] = np.inf
                    continue
                err = base_err - S_test[:, :m] @ delta
                fold_risks[fi, mi, ti] = float(err @ err) / err.size


def _accumulate_flr_risks(fold_risks, target, folds, m_grid, tau_grid):
    n = target.n
    G = target.grid.size
    w = target.grid.trapezoid_weights()
    m_build = min(max(m_grid), G)
    for fi, test_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        train = target.subset(np.flatnonzero(train_mask))
        try:
            coef, eigen, m_valid = _flr_prefix(train, m_build)
        except (DomainError, IllConditionedError):
            fold_risks[fi, :, :] = np.inf
            continue
        x_mean = train.curves.mean(axis=0)
        y_mean = train.responses.mean()
        P_test = (target.curves[test_idx] - x_mean) @ (eigen.eigenfunctions * w).T
        y_test_c = target.responses[test_idx] - y_mean
        for mi, m in enumerate(m_grid):
            if m > m_build or m > m_valid:
                fold_risks[fi, mi, :] = np.inf
                continue
            err = y_test_c - P_test[:, :m] @ coef[:m]
            # the baseline has no tau: the same risk fills the whole row
            fold_risks[fi, mi, :] = float(err @ err) / err.size


def _select_best(risks, se, m_grid, tau_grid, selection):
    order = [
        (mi, ti)
        for mi in sorted(range(len(m_grid)), key=m_grid.__getitem__)
        for ti in range(len(tau_grid))
    ]
    best = None
    best_risk = np.inf
    for mi, ti in order:
        r = risks[mi, ti]
        if np.isfinite(r) and r < best_risk:
            best = (mi, ti)
            best_risk = r
    if selection == "min":
        return best
    threshold = best_risk + (se[best] if np.isfinite(se[best]) else 0.0)
    for mi, ti in order:
        if np.isfinite(risks[mi, ti]) and risks[mi, ti] <= threshold:
            return (mi, ti)
    return best
