"""Synthetic data generators for the benchmark studies.

Target curves follow a truncated Karhunen-Loeve expansion in the cosine
basis with polynomially decaying eigenvalues; source slopes perturb the
target slope coefficients by signed contrasts, and source curves use
either the cosine or the Haar basis depending on the scenario. Responses
are generated from exact (analytic) inner products, so quadrature error
lives only in the estimators, never in the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .funcore import FunctionalDataset, Grid, GridFunction
from .regress import SlopeEstimate

MODELS = ("I", "II", "III", "IV")
SCORE_DISTS = ("uniform", "gaussian", "t5")

#: The benchmark MISE is evaluated on this many equally spaced points.
EVAL_GRID_SIZE = 100


@dataclass(frozen=True)
class SyntheticConfig:
    """Scenario parameters for one synthetic run."""

    alpha: float = 2.0
    beta: float = 2.5
    n: int = 150
    n_l: int = 100
    L: int = 20
    K: int = 20
    h: float = 2.0
    s: int = 1
    sigma_eps: float = 0.5
    model: str = "I"
    score_dist: str = "uniform"
    truncation: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", str(self.model).upper())
        if self.model not in MODELS:
            raise DomainError(f"model must be one of {MODELS}")
        if self.score_dist not in SCORE_DISTS:
            raise DomainError(f"score_dist must be one of {SCORE_DISTS}")
        if self.alpha <= 1:
            raise DomainError("alpha must exceed 1")
        if not 1 <= self.s <= self.truncation:
            raise DomainError("s must be within [1, truncation]")
        if not 0 <= self.K <= self.L:
            raise DomainError("K must be within [0, L]")
        if self.h < 0 or self.sigma_eps < 0:
            raise DomainError("h and sigma_eps must be nonnegative")
        if self.n < 1 or self.n_l < 2 or self.truncation < 1:
            raise DomainError("sample sizes must be positive (n_l at least 2)")


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    """The generating slope function and its basis coefficients."""

    slope: GridFunction
    slope_coeffs: np.ndarray
    basis_used: str


@dataclass(frozen=True, eq=False)
class SourceInfo:
    """Generation record for one source: its slope coefficients (in the
    cosine basis), which basis built its curves, and its contrast."""

    slope_coeffs: np.ndarray
    curve_basis: str
    informative: bool
    delta_l1: float


def default_grid_size(model: str) -> int:
    """100 points for the cosine-only scenarios; a dyadic-aligned 257 for
    scenarios with Haar curves."""
    return 257 if str(model).upper() in ("III", "IV") else 100


def cosine_basis(k: int, grid: Grid) -> GridFunction:
    """sqrt(2) cos(k pi t), the k-th cosine basis function (k >= 1)."""
    if k < 1:
        raise DomainError("basis index starts at 1")
    return GridFunction(grid, np.sqrt(2.0) * np.cos(k * np.pi * grid.points))


def haar_basis(k: int, grid: Grid) -> GridFunction:
    """The k-th Haar wavelet, k = 2^j + l with 0 <= l < 2^j.

    Takes +2^{j/2} on [l/2^j, (l+0.5)/2^j), -2^{j/2} on the closed upper
    half [(l+0.5)/2^j, (l+1)/2^j], 0 elsewhere.
    """
    if k < 1:
        raise DomainError("basis index starts at 1")
    j = k.bit_length() - 1
    ell = k - (1 << j)
    scale = 2.0 ** (j / 2.0)
    lo = ell / (1 << j)
    mid = (ell + 0.5) / (1 << j)
    hi = (ell + 1) / (1 << j)
    t = grid.points
    values = np.where(
        (t >= lo) & (t < mid), scale, np.where((t >= mid) & (t <= hi), -scale, 0.0)
    )
    return GridFunction(grid, values)


def _basis_matrix(kind: str, kmax: int, grid: Grid) -> np.ndarray:
    builder = cosine_basis if kind == "cosine" else haar_basis
    return np.stack([builder(k, grid).values for k in range(1, kmax + 1)])


@lru_cache(maxsize=8)
def _cosine_haar_cross(truncation: int) -> np.ndarray:
    """Exact integrals <psi_k, phi_j> of Haar wavelets against the cosine
    basis; row k, column j (both 1-based indices shifted down)."""

    def antideriv(j, t):
        return np.sqrt(2.0) * np.sin(j * np.pi * t) / (j * np.pi)

    M = np.empty((truncation, truncation))
    j = np.arange(1, truncation + 1)
    for k in range(1, truncation + 1):
        a = k.bit_length() - 1
        ell = k - (1 << a)
        scale = 2.0 ** (a / 2.0)
        lo = ell / (1 << a)
        mid = (ell + 0.5) / (1 << a)
        hi = (ell + 1) / (1 << a)
        M[k - 1] = scale * (
            2.0 * antideriv(j, mid) - antideriv(j, lo) - antideriv(j, hi)
        )
    return M


def slope_coefficients(beta: float, truncation: int) -> np.ndarray:
    """Alternating-sign coefficients 4 k^{-beta} (-1)^{k+1}."""
    k = np.arange(1, truncation + 1)
    return 4.0 * k ** (-beta) * (-1.0) ** (k + 1)


def sample_scores(rng: np.random.Generator, dist: str, shape) -> np.ndarray:
    """Unit-variance score draws from the configured distribution."""
    if dist == "uniform":
        root3 = np.sqrt(3.0)
        return rng.uniform(-root3, root3, shape)
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "t5":
        return np.sqrt(3.0 / 5.0) * rng.standard_t(5, shape)
    raise DomainError(f"unknown score distribution {dist!r}")


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_target(
    config: SyntheticConfig, grid: Grid, score_sampler=None
) -> tuple[FunctionalDataset, SyntheticTruth]:
    """Draw the target sample and return it with the generating truth.

    `score_sampler(rng, shape)` overrides the score distribution; tests
    use it to pin scores to degenerate values.
    """
    rng = _stream(config.seed, 0)
    trunc = config.truncation
    lam_sqrt = np.arange(1, trunc + 1) ** (-config.alpha / 2.0)
    if score_sampler is None:
        Z = sample_scores(rng, config.score_dist, (config.n, trunc))
    else:
        Z = score_sampler(rng, (config.n, trunc))
    xi = Z * lam_sqrt
    Phi = _basis_matrix("cosine", trunc, grid)
    curves = xi @ Phi
    b = slope_coefficients(config.beta, trunc)
    noise = rng.normal(0.0, config.sigma_eps, config.n)
    responses = xi @ b + noise
    truth = SyntheticTruth(GridFunction(grid, b @ Phi), b, "cosine")
    return FunctionalDataset(grid, curves, responses, "target"), truth


def generate_sources(
    config: SyntheticConfig, grid: Grid, truth: SyntheticTruth
) -> tuple[list[FunctionalDataset], list[SourceInfo]]:
    """Draw every source sample for the configured scenario.

    Scenario I generates K informative sources (non-informative ones do
    not exist there); scenarios II-IV generate L sources whose first K are
    informative. Source slopes always live in the cosine basis; responses
    for Haar-curve sources use the exact cosine-Haar cross integrals.
    """
    trunc = config.truncation
    b = truth.slope_coeffs
    lam_sqrt = np.arange(1, trunc + 1) ** (-config.alpha / 2.0)
    model = config.model
    count = config.K if model == "I" else config.L
    cosine = _basis_matrix("cosine", trunc, grid)
    haar = _basis_matrix("haar", trunc, grid) if model in ("III", "IV") else None
    datasets = []
    infos = []
    for l in range(count):
        rng = _stream(config.seed, 1 + l)
        informative = True if model == "I" else l < config.K
        signs = rng.integers(0, 2, trunc) * 2.0 - 1.0
        w = b.copy()
        if model == "I":
            w[: config.s] -= signs[: config.s] * config.h / config.s
        elif informative:
            w -= signs * config.h / trunc
        else:
            w -= 40.0 * signs
        use_haar = model == "IV" or (model == "III" and not informative)
        Z = rng.standard_normal((config.n_l, trunc))
        xi = Z * lam_sqrt
        curves = xi @ (haar if use_haar else cosine)
        if use_haar:
            signal = xi @ (_cosine_haar_cross(trunc) @ w)
        else:
            signal = xi @ w
        responses = signal + rng.normal(0.0, config.sigma_eps, config.n_l)
        datasets.append(FunctionalDataset(grid, curves, responses, f"source-{l}"))
        infos.append(
            SourceInfo(
                slope_coeffs=w,
                curve_basis="haar" if use_haar else "cosine",
                informative=informative,
                delta_l1=float(np.abs(w - b).sum()),
            )
        )
    return datasets, infos


def _resample(curve: GridFunction, points: np.ndarray) -> np.ndarray:
    if curve.grid.size == points.size:
        return curve.values
    return np.interp(points, curve.grid.points, curve.values)


def mise(estimate: SlopeEstimate, truth: SyntheticTruth) -> float:
    """Integrated squared error of the fitted slope against the truth,
    both linearly resampled onto the 100-point evaluation grid."""
    eval_grid = Grid.uniform(EVAL_GRID_SIZE)
    diff = _resample(estimate.slope_curve, eval_grid.points) - _resample(
        truth.slope, eval_grid.points
    )
    return float(np.dot(eval_grid.trapezoid_weights(), diff * diff))
