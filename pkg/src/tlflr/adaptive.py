"""Adaptive source selection and aggregation.

Ranks sources by the discrepancy between empirical cross-moment curves,
fits one candidate per nested source set on one half of the target data,
and combines candidates on the other half: sparse aggregation (default)
picks the empirical-risk minimizer and the best convex pairing with it;
Q-aggregation returns simplex weights under an entropy penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, DomainError, InvariantError, ValidationError
from .funcore import FunctionalDataset, GridFunction, _require_same_grid
from .modelsel import CVConfig, cross_validate
from .regress import SlopeEstimate, _fit_tlflr_from_preps, _prep_sources, fit_flr

#: Below this quadratic coefficient the pair-mixing problem is flat in
#: lambda and we take lambda = 1 (the ERM candidate).
DEGENERATE_QUAD_TOL = 1e-14

QAGG_TOL = 1e-8
QAGG_MAX_ITER = 50_000


@dataclass(frozen=True, eq=False)
class SplitSpec:
    """A two-way split of target indices: fitting half and holdout half."""

    indices_d1: np.ndarray
    indices_d2: np.ndarray
    seed: int

    def __post_init__(self):
        d1 = np.asarray(self.indices_d1, dtype=int)
        d2 = np.asarray(self.indices_d2, dtype=int)
        if d1.size == 0 or d2.size == 0:
            raise DomainError("both halves of the split must be nonempty")
        combined = np.concatenate([d1, d2])
        n = combined.size
        if np.intersect1d(d1, d2).size or not np.array_equal(
            np.sort(combined), np.arange(n)
        ):
            raise DomainError("split halves must partition range(n)")
        object.__setattr__(self, "indices_d1", d1)
        object.__setattr__(self, "indices_d2", d2)

    @classmethod
    def random(cls, n: int, fraction: float, seed: int) -> "SplitSpec":
        if not 0.0 < fraction < 1.0:
            raise DomainError("split fraction must be strictly between 0 and 1")
        if n < 2:
            raise DomainError("need at least two observations to split")
        size1 = int(np.ceil(n * fraction))
        size1 = min(max(size1, 1), n - 1)
        perm = np.random.default_rng(seed).permutation(n)
        return cls(np.sort(perm[:size1]), np.sort(perm[size1:]), seed)


@dataclass(frozen=True, eq=False)
class CandidateSets:
    """Per-source discrepancies and the nested candidate index sets
    A_0 = {} through A_L (0-based source indices)."""

    zeta: np.ndarray
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        zeta = np.asarray(self.zeta, dtype=float)
        sets = tuple(tuple(int(i) for i in s) for s in self.sets)
        if len(sets) != zeta.size + 1 or sets[0] != ():
            raise InvariantError("need L+1 candidate sets starting from the empty set")
        for l, s in enumerate(sets):
            if len(s) != l or (l and not set(sets[l - 1]) <= set(s)):
                raise InvariantError("candidate sets must be nested with |A_l| = l")
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "sets", sets)


@dataclass(frozen=True, eq=False)
class AggregationResult:
    """Sparse-aggregation output: selected pair, mixing weight, the
    combined estimate, and every candidate's holdout risk."""

    chosen: tuple[int, int, float]
    aggregate: SlopeEstimate
    empirical_risks: np.ndarray
    candidates: tuple[SlopeEstimate, ...]
    candidate_sets: CandidateSets | None = None
    split: SplitSpec | None = None


@dataclass(frozen=True, eq=False)
class QAggWeights:
    """Simplex weights from Q-aggregation."""

    rho: np.ndarray
    temperature: float
    converged: bool = True

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if np.any(rho < -1e-10) or abs(rho.sum() - 1.0) > 1e-10:
            raise InvariantError("Q-aggregation weights must lie on the simplex")
        object.__setattr__(self, "rho", rho)


def zeta_statistic(source: FunctionalDataset, target_d1: FunctionalDataset) -> float:
    """Integrated squared gap between the empirical cross-moment curves
    (1/n) sum_i X_i(t) (Y_i - Ybar) of the source and the target half."""
    _require_same_grid(source.grid, target_d1.grid, "zeta_statistic")
    src_moment = (
        source.curves * (source.responses - source.responses.mean())[:, None]
    ).mean(axis=0)
    tgt_moment = (
        target_d1.curves * (target_d1.responses - target_d1.responses.mean())[:, None]
    ).mean(axis=0)
    diff = src_moment - tgt_moment
    w = source.grid.trapezoid_weights()
    return float(np.dot(w, diff * diff))


def build_candidate_sets(zeta) -> CandidateSets:
    """Nested sets of the l smallest-discrepancy sources; ties keep the
    lower source index first."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 1 or zeta.size < 1:
        raise DomainError("need at least one discrepancy value")
    if not np.all(np.isfinite(zeta)):
        raise ValidationError("discrepancies must be finite")
    order = np.argsort(zeta, kind="stable")
    sets = [()] + [tuple(sorted(int(i) for i in order[:l])) for l in range(1, zeta.size + 1)]
    return CandidateSets(zeta, tuple(sets))


def _holdout_errors(candidates, target_d2):
    """Per-observation prediction errors on the holdout half, candidates
    centered by the holdout means (no candidate intercepts involved)."""
    grid = target_d2.grid
    for cand in candidates:
        _require_same_grid(grid, cand.slope_curve.grid, "aggregation candidates")
    y_c = target_d2.responses - target_d2.responses.mean()
    x_c = target_d2.curves - target_d2.curves.mean(axis=0)
    w = grid.trapezoid_weights()
    slopes = np.stack([cand.slope_curve.values for cand in candidates], axis=1)
    fitted = x_c @ (w[:, None] * slopes)
    return y_c[:, None] - fitted


def sparse_aggregate(
    candidates: list[SlopeEstimate], target_d2: FunctionalDataset
) -> AggregationResult:
    """Two-stage aggregation on the holdout half.

    Stage one picks the candidate minimizing the holdout risk; stage two
    scans every candidate for the best convex combination with it, solving
    the inner 1-D quadratic in closed form and clamping to [0, 1].
    """
    if not candidates:
        raise DomainError("need at least one candidate estimate")
    E = _holdout_errors(candidates, target_d2)
    n_bar = E.shape[0]
    risks = (E * E).sum(axis=0) / n_bar
    l1 = int(np.argmin(risks))
    u = E[:, l1]
    best_l2 = l1
    best_lam = 1.0
    best_risk = risks[l1]
    for l in range(len(candidates)):
        v = E[:, l]
        d = u - v
        a = float(d @ d) / n_bar
        if a < DEGENERATE_QUAD_TOL:
            lam, risk = 1.0, risks[l1]
        else:
            lam = float(v @ (v - u)) / n_bar / a
            lam = min(max(lam, 0.0), 1.0)
            mix = lam * u + (1.0 - lam) * v
            risk = float(mix @ mix) / n_bar
        if risk < best_risk:
            best_risk, best_lam, best_l2 = risk, lam, l
    if best_risk > risks.min() + 1e-10:
        raise InvariantError("aggregate risk exceeds the best candidate risk")
    first = candidates[l1]
    second = candidates[best_l2]
    values = best_lam * first.slope_curve.values + (1.0 - best_lam) * second.slope_curve.values
    aggregate = SlopeEstimate(
        slope_curve=GridFunction(target_d2.grid, values),
        coefficients=None,
        basis=None,
        # candidates fitted on the same target half share their intercept
        # data; reuse the ERM candidate's
        response_mean=first.response_mean,
        curve_mean=first.curve_mean,
        m=None,
        tau=None,
    )
    return AggregationResult(
        chosen=(l1, best_l2, best_lam),
        aggregate=aggregate,
        empirical_risks=risks,
        candidates=tuple(candidates),
    )


def _qagg_objective(rho, E, risks, temperature, n_bar):
    mix = E @ rho
    entropy = np.sum(rho[rho > 0] * np.log(rho[rho > 0]))
    return (
        float(mix @ mix) / n_bar
        + float(risks @ rho)
        + 2.0 * temperature / n_bar * entropy
    )


def q_aggregate(
    candidates: list[SlopeEstimate],
    target_d2: FunctionalDataset,
    temperature: float,
) -> QAggWeights:
    """Entropy-penalized aggregation weights via exponentiated gradient
    descent on the simplex; non-convergence is flagged, not raised."""
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    if not candidates:
        raise DomainError("need at least one candidate estimate")
    C = len(candidates)
    if C == 1:
        return QAggWeights(np.ones(1), temperature, True)
    E = _holdout_errors(candidates, target_d2)
    n_bar = E.shape[0]
    risks = (E * E).sum(axis=0) / n_bar
    rho = np.full(C, 1.0 / C)
    obj = _qagg_objective(rho, E, risks, temperature, n_bar)
    step = 1.0
    converged = False
    for _ in range(QAGG_MAX_ITER):
        grad = 2.0 * (E.T @ (E @ rho)) / n_bar + risks
        grad += 2.0 * temperature / n_bar * (1.0 + np.log(np.maximum(rho, 1e-300)))
        improved = False
        while step >= 1e-14:
            logits = np.log(np.maximum(rho, 1e-300)) - step * grad
            logits -= logits.max()
            trial = np.exp(logits)
            trial /= trial.sum()
            trial_obj = _qagg_objective(trial, E, risks, temperature, n_bar)
            if trial_obj <= obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        rho = trial
        if obj - trial_obj <= QAGG_TOL:
            obj = trial_obj
            converged = True
            break
        obj = trial_obj
        step = min(step * 2.0, 1e3)
    return QAggWeights(rho, temperature, converged)


def adaptive_fit(
    target: FunctionalDataset,
    sources: list[FunctionalDataset],
    split_fraction: float = 0.5,
    seed: int = 0,
    tuning: CVConfig | None = None,
    shared_tuning: tuple[int, float] | None = None,
) -> AggregationResult:
    """Full adaptive pipeline on one target sample.

    Splits the target, ranks sources by `zeta_statistic` on the fitting
    half, fits one candidate per nested source set (the empty set falls
    back to the target-only baseline), and sparse-aggregates on the
    holdout half. Candidates re-tune (m, tau) by cross-validation unless
    `shared_tuning` pins one pair for all of them.
    """
    if target.n < 4:
        raise DomainError("adaptive fitting needs at least four target observations")
    for src in sources:
        _require_same_grid(target.grid, src.grid, "adaptive_fit")
    split = SplitSpec.random(target.n, split_fraction, seed)
    d1 = target.subset(split.indices_d1)
    d2 = target.subset(split.indices_d2)
    if sources:
        zeta = np.array([zeta_statistic(src, d1) for src in sources])
        csets = build_candidate_sets(zeta)
        preps = _prep_sources(sources)
    else:
        csets = CandidateSets(np.empty(0), ((),))
        preps = []
    tuning = tuning if tuning is not None else CVConfig()
    candidates = []
    for index_set in csets.sets:
        sub_sources = [sources[i] for i in index_set]
        sub_preps = [preps[i] for i in index_set]
        if shared_tuning is not None:
            m, tau = shared_tuning
        else:
            report = cross_validate(
                d1,
                sub_sources,
                tuning,
                "TL-FLR" if index_set else "FLR",
                _source_preps=sub_preps if index_set else None,
            )
            m, tau = report.best
        if index_set:
            candidates.append(_fit_tlflr_from_preps(sub_preps, d1, m, tau))
        else:
            candidates.append(fit_flr(d1, m))
    result = sparse_aggregate(candidates, d2)
    return replace(result, candidate_sets=csets, split=split)
