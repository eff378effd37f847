"""Slope estimation for scalar-on-function regression.

Implements the two-step transfer estimator (pooled-source FPCA, closed-form
initial coefficients, lasso bias correction on the target), the target-only
FPCA baseline, and prediction. The lasso is solved by cyclic coordinate
descent with exact coordinate minimization; the inner sweep loop is
compiled with numba when available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    IllConditionedError,
    InvariantError,
    ValidationError,
)
from .funcore import (
    CovMatrix,
    EigenSystem,
    FunctionalDataset,
    Grid,
    GridFunction,
    ScoreMatrix,
    _require_same_grid,
    covariance_estimate,
    eigendecompose,
    inner_product,
    mean_function,
)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an accelerator, not required
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


#: Smallest usable diagonal entry of the pooled score Gram (and smallest
#: usable eigenvalue in the baseline): below this the requested truncation
#: level is too large for the data.
GRAM_DIAG_MIN = 1e-12

#: Allowed off-diagonal magnitude of the pooled score Gram, relative to its
#: largest diagonal entry. The Gram is diagonal by construction; larger
#: off-diagonals indicate quadrature drift.
GRAM_OFFDIAG_RTOL = 1e-6

DEFAULT_LASSO_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 10_000


@dataclass(frozen=True, eq=False)
class SlopeEstimate:
    """A fitted slope function with the data needed to predict.

    `coefficients` and `basis` are present for single-basis fits and None
    for pointwise combinations of estimates on different bases.
    """

    slope_curve: GridFunction
    coefficients: np.ndarray | None
    basis: EigenSystem | None
    response_mean: float
    curve_mean: GridFunction
    m: int | None
    tau: float | None

    def __post_init__(self):
        if self.coefficients is not None:
            coef = np.asarray(self.coefficients, dtype=float)
            object.__setattr__(self, "coefficients", coef)
            expansion = coef @ self.basis.eigenfunctions[: coef.size]
            if np.max(np.abs(expansion - self.slope_curve.values)) > 1e-10:
                raise InvariantError("slope curve does not match its coefficient expansion")


@dataclass(frozen=True, eq=False)
class LassoSolution:
    """Coordinate-descent output: solution, per-sweep objective, status."""

    delta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool

    def __post_init__(self):
        trace = np.asarray(self.objective_trace, dtype=float)
        if trace.size:
            slack = 1e-10 * max(1.0, abs(float(trace[0])))
            if np.any(np.diff(trace) > slack):
                raise InvariantError("lasso objective increased between sweeps")
        object.__setattr__(self, "objective_trace", trace)


def soft_threshold(z, tau):
    """Soft-thresholding operator sign(z) * max(|z| - tau, 0)."""
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


@njit(cache=True)
def _cd_sweeps(gram, c, delta, tau, tol, max_sweeps, yy):
    """Cyclic coordinate descent on 0.5*yy - c.delta + 0.5 delta.G.delta + tau|delta|_1.

    `gram` is X'X/n, `c` is X'r/n for the residual r the caller minimizes
    against, `yy` is r'r/n. Mutates `delta` in place; returns the per-sweep
    objective trace, the sweep count, and a convergence flag.
    """
    m = gram.shape[0]
    grad = c - gram @ delta
    trace = np.empty(64)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        max_change = 0.0
        for k in range(m):
            gkk = gram[k, k]
            if gkk <= 0.0:
                continue  # zero column: delta_k stays put (valid when tau > 0)
            old = delta[k]
            z = grad[k] + gkk * old
            az = abs(z) - tau
            if az > 0.0:
                new = az / gkk if z > 0.0 else -az / gkk
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                delta[k] = new
                for j in range(m):
                    grad[j] -= gram[j, k] * d
                ad = abs(d)
                if ad > max_change:
                    max_change = ad
        obj = yy
        l1 = 0.0
        for j in range(m):
            obj -= delta[j] * (c[j] + grad[j])
            l1 += abs(delta[j])
        obj = 0.5 * obj + tau * l1
        if sweeps >= trace.shape[0]:
            bigger = np.empty(trace.shape[0] * 2)
            bigger[: trace.shape[0]] = trace
            trace = bigger
        trace[sweeps] = obj
        sweeps += 1
        if max_change <= tol:
            converged = True
            break
    return delta, trace[:sweeps], sweeps, converged


def _warm_kernel():
    """Trigger the one-off JIT compile so forked workers inherit it."""
    g = np.eye(1)
    _cd_sweeps(g, np.zeros(1), np.zeros(1), 0.0, 1e-8, 2, 0.0)


def _kkt_violation(gram, c, delta, tau):
    """Worst violation of the stationarity conditions at delta."""
    grad = c - gram @ delta
    active = delta != 0.0
    worst = 0.0
    if np.any(~active):
        worst = max(worst, float(np.max(np.abs(grad[~active]))) - tau)
    if np.any(active):
        worst = max(
            worst, float(np.max(np.abs(grad[active] - tau * np.sign(delta[active]))))
        )
    return worst


def _solve_lasso(gram, c, yy, tau, tol, max_sweeps, delta0=None):
    """Run coordinate descent, tightening the sweep tolerance if the
    stationarity residual at the stopping point exceeds half the
    certified 10*tol bound."""
    gram = np.ascontiguousarray(gram)
    c = np.ascontiguousarray(c)
    delta = np.zeros(c.size) if delta0 is None else np.array(delta0, dtype=float)
    traces = []
    total = 0
    converged = False
    inner_tol = tol
    for _ in range(4):
        budget = max_sweeps - total
        if budget <= 0:
            converged = False
            break
        delta, trace, sweeps, converged = _cd_sweeps(
            gram, c, delta, tau, inner_tol, budget, yy
        )
        traces.append(trace)
        total += sweeps
        if not converged:
            break
        if _kkt_violation(gram, c, delta, tau) <= 5.0 * tol:
            break
        inner_tol *= 0.1
    trace = np.concatenate(traces) if traces else np.empty(0)
    return delta, trace, total, converged


def _lasso_core(S, residual, tau, tol, max_sweeps) -> LassoSolution:
    n = S.shape[0]
    if tau == 0.0 and S.shape[1] and np.min(np.sum(S * S, axis=0)) / n < GRAM_DIAG_MIN:
        raise IllConditionedError("zero score column with tau = 0 has no unique minimizer")
    gram = S.T @ S / n
    gram = 0.5 * (gram + gram.T)
    c = S.T @ residual / n
    yy = float(residual @ residual) / n
    delta, trace, iterations, converged = _solve_lasso(gram, c, yy, tau, tol, max_sweeps)
    return LassoSolution(delta, trace, iterations, converged)


def lasso_cd(
    scores: ScoreMatrix,
    partial_residual_target: np.ndarray,
    tau: float,
    tol: float = DEFAULT_LASSO_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> LassoSolution:
    """Lasso bias-correction step solved by cyclic coordinate descent.

    Parameters
    ----------
    scores : ScoreMatrix
        Target projection scores (n, m).
    partial_residual_target : ndarray
        Centered responses minus the initial-estimator fit, Y - Ybar - S w.
    tau : float
        Nonnegative l1 penalty level.
    tol : float
        Stop once the largest coordinate change in a sweep is below this.
    max_sweeps : int
        Hard cap on full coordinate sweeps.

    At convergence the solution carries a stationarity certificate: the
    per-coordinate gradient statistic (1/n) S'r satisfies
    |.| <= tau + 10*tol on inactive coordinates and equals tau*sign(delta_k)
    within 10*tol on active ones.
    """
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    if tol <= 0 or max_sweeps < 1:
        raise DomainError("tol must be positive and max_sweeps at least 1")
    S = scores.scores
    r = np.asarray(partial_residual_target, dtype=float)
    if r.ndim != 1 or r.size != S.shape[0]:
        raise DimensionError("partial residual length must match the score rows")
    if not np.all(np.isfinite(r)) or not np.all(np.isfinite(S)):
        raise ValidationError("lasso inputs must be finite")
    return _lasso_core(S, r, tau, tol, max_sweeps)


def _pooled_normal_equations(score_arrays, response_arrays):
    """Pooled Gram and cross-moment sum_l pi_l/(n_l-1) (S'S, S'(y - ybar))."""
    m = score_arrays[0].shape[1]
    total = sum(S.shape[0] for S in score_arrays)
    gram = np.zeros((m, m))
    moment = np.zeros(m)
    for S, y in zip(score_arrays, response_arrays):
        nl = S.shape[0]
        factor = (nl / total) / (nl - 1)
        gram += factor * (S.T @ S)
        moment += factor * (S.T @ (y - y.mean()))
    return gram, moment


def _check_pooled_gram(gram):
    diag = np.diag(gram).copy()
    off = gram - np.diag(diag)
    scale = max(diag.max(initial=0.0), 0.0)
    if scale > 0 and np.max(np.abs(off)) > GRAM_OFFDIAG_RTOL * scale:
        raise InvariantError(
            "pooled score Gram is not diagonal; eigenbasis and scores disagree"
        )
    return diag


def fit_initial(
    source_scores: list[ScoreMatrix], source_responses: list[np.ndarray]
) -> np.ndarray:
    """Closed-form initial coefficients from the pooled source scores.

    Minimizes the pooled weighted least squares over all sources; because
    the pooled Gram is diagonal by construction of the eigenbasis, each
    coefficient is the pooled cross-moment over the matching diagonal entry.
    """
    if not source_scores or len(source_scores) != len(source_responses):
        raise DomainError("need matching, nonempty score and response lists")
    m = source_scores[0].m
    for sm in source_scores:
        if sm.m != m:
            raise DimensionError("all score matrices must share m")
        if sm.n < 2:
            raise DomainError("each source needs at least two observations")
    arrays = [sm.scores for sm in source_scores]
    responses = [np.asarray(y, dtype=float) for y in source_responses]
    gram, moment = _pooled_normal_equations(arrays, responses)
    diag = _check_pooled_gram(gram)
    if np.any(diag < GRAM_DIAG_MIN):
        raise IllConditionedError(
            f"pooled Gram diagonal below {GRAM_DIAG_MIN:g}: m too large for the data"
        )
    return moment / diag


class _SourcePrep:
    """Per-source pieces reused across candidate fits: covariance,
    centered curves, centered responses."""

    __slots__ = ("n", "cov", "centered", "responses")

    def __init__(self, src: FunctionalDataset):
        self.n = src.n
        self.cov = covariance_estimate(src).entries
        self.centered = src.curves - src.curves.mean(axis=0)
        self.responses = src.responses


def _prep_sources(sources: list[FunctionalDataset]) -> list[_SourcePrep]:
    if not sources:
        raise DomainError("need at least one source dataset")
    grid = sources[0].grid
    for src in sources:
        _require_same_grid(grid, src.grid, "source datasets")
    return [_SourcePrep(src) for src in sources]


class _PooledBasis:
    """Pooled-source FPCA basis plus the initial estimator, built once per
    source set and reused across target refits (CV folds, tuning grids)."""

    __slots__ = ("grid", "eigen", "phi_w", "w_hat", "m_valid")

    def __init__(self, preps: list[_SourcePrep], grid: Grid, m_max: int):
        total = sum(p.n for p in preps)
        weights = np.array([p.n / total for p in preps])
        pooled = np.zeros((grid.size, grid.size))
        for p in preps:
            pooled += (p.n / total) * p.cov
        cov = CovMatrix(grid, pooled)
        self.grid = grid
        self.eigen = eigendecompose(cov, m_max, weights)
        w = grid.trapezoid_weights()
        self.phi_w = (self.eigen.eigenfunctions * w).T
        score_arrays = [p.centered @ self.phi_w for p in preps]
        responses = [p.responses for p in preps]
        gram, moment = _pooled_normal_equations(score_arrays, responses)
        diag = _check_pooled_gram(gram)
        usable = diag >= GRAM_DIAG_MIN
        self.m_valid = int(np.argmin(usable)) if not usable.all() else m_max
        self.w_hat = np.full(m_max, np.nan)
        self.w_hat[: self.m_valid] = (
            moment[: self.m_valid] / diag[: self.m_valid]
        )

    def require_m(self, m: int) -> None:
        if m > self.m_valid:
            raise IllConditionedError(
                f"pooled Gram diagonal below {GRAM_DIAG_MIN:g} at m={m}"
            )


class _TargetDesign:
    """Target scores and centered responses against a pooled basis."""

    __slots__ = ("S", "yc", "y_mean", "x_mean")

    def __init__(self, basis: _PooledBasis, curves: np.ndarray, responses: np.ndarray):
        self.x_mean = curves.mean(axis=0)
        self.y_mean = float(responses.mean())
        self.S = (curves - self.x_mean) @ basis.phi_w
        self.yc = responses - self.y_mean


def fit_tlflr(
    target: FunctionalDataset,
    sources: list[FunctionalDataset],
    m: int,
    tau: float,
    tol: float = DEFAULT_LASSO_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> SlopeEstimate:
    """Two-step transfer estimator of the target slope function.

    Pipeline: pooled source covariance -> eigendecomposition at level m ->
    projection scores for sources and target (each centered by its own
    mean) -> closed-form initial coefficients -> lasso bias correction on
    the target -> slope curve assembled in the estimated basis.

    Parameters
    ----------
    target : FunctionalDataset
        Target sample; its response and curve means are stored for
        prediction.
    sources : list of FunctionalDataset
        Auxiliary samples sharing the target grid; must be nonempty.
    m : int
        Truncation level (number of leading eigenfunctions).
    tau : float
        l1 penalty for the bias-correction step; 0 disables shrinkage.
    """
    if not sources:
        raise DomainError("fit_tlflr needs at least one source; use fit_flr otherwise")
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    preps = _prep_sources(sources)
    _require_same_grid(target.grid, sources[0].grid, "target vs sources")
    return _fit_tlflr_from_preps(preps, target, m, tau, tol, max_sweeps)


def _fit_tlflr_from_preps(
    preps: list[_SourcePrep],
    target: FunctionalDataset,
    m: int,
    tau: float,
    tol: float = DEFAULT_LASSO_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> SlopeEstimate:
    basis = _PooledBasis(preps, target.grid, m)
    basis.require_m(m)
    design = _TargetDesign(basis, target.curves, target.responses)
    residual = design.yc - design.S @ basis.w_hat
    solution = _lasso_core(design.S, residual, tau, tol, max_sweeps)
    coef = basis.w_hat + solution.delta
    slope = GridFunction(target.grid, coef @ basis.eigen.eigenfunctions)
    return SlopeEstimate(
        slope_curve=slope,
        coefficients=coef,
        basis=basis.eigen,
        response_mean=design.y_mean,
        curve_mean=GridFunction(target.grid, design.x_mean),
        m=m,
        tau=tau,
    )


def _flr_prefix(target: FunctionalDataset, m_max: int):
    """Baseline components at every level up to m_max: coefficients
    g_k / lambda_k, the eigensystem, and the usable prefix length."""
    if target.n < 2:
        raise DomainError("baseline fit needs at least two target curves")
    cov = covariance_estimate(target)
    eigen = eigendecompose(cov, m_max)
    centered = target.curves - target.curves.mean(axis=0)
    yc = target.responses - target.responses.mean()
    ghat = centered.T @ yc / (target.n - 1)
    w = target.grid.trapezoid_weights()
    proj = (eigen.eigenfunctions * w) @ ghat
    usable = eigen.eigenvalues >= GRAM_DIAG_MIN
    m_valid = int(np.argmin(usable)) if not usable.all() else m_max
    coef = np.full(m_max, np.nan)
    coef[:m_valid] = proj[:m_valid] / eigen.eigenvalues[:m_valid]
    return coef, eigen, m_valid


def fit_flr(target: FunctionalDataset, m: int) -> SlopeEstimate:
    """Classical FPCA-based estimator using only target data.

    Coefficients are the quadrature projections of the empirical
    cross-covariance curve onto the target eigenfunctions, scaled by the
    matching eigenvalues.
    """
    if m < 1 or m > target.grid.size:
        raise DomainError(f"m must be in [1, {target.grid.size}]")
    coef, eigen, m_valid = _flr_prefix(target, m)
    if m > m_valid:
        raise IllConditionedError(
            f"target eigenvalue below {GRAM_DIAG_MIN:g} at m={m}"
        )
    slope = GridFunction(target.grid, coef @ eigen.eigenfunctions)
    return SlopeEstimate(
        slope_curve=slope,
        coefficients=coef,
        basis=eigen,
        response_mean=float(target.responses.mean()),
        curve_mean=mean_function(target),
        m=m,
        tau=0.0,
    )


def predict(estimate: SlopeEstimate, curve: GridFunction) -> float:
    """Predicted response: Ybar + <curve - Xbar, slope>."""
    _require_same_grid(estimate.slope_curve.grid, curve.grid, "predict")
    centered = GridFunction(curve.grid, curve.values - estimate.curve_mean.values)
    return estimate.response_mean + inner_product(centered, estimate.slope_curve)
