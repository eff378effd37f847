"""Grid-discretized functional data primitives.

Curves are real functions on [0, 1] sampled on a shared uniform grid.
Integrals use the composite trapezoid rule, and the covariance
eigenproblem is solved in the quadrature-weighted space so that the
returned eigenfunctions are orthonormal under that same rule.

All types are immutable after construction and safe to share across
threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ValidationError

#: Maximum tolerated asymmetry of a covariance matrix, max |K[i,j]-K[j,i]|.
SYMMETRY_TOL = 1e-10

#: Most negative eigenvalue accepted before raising; anything in
#: [-EIGENVALUE_CLAMP_TOL, 0) is treated as numerical noise and clamped.
EIGENVALUE_CLAMP_TOL = 1e-10


def _finite_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid on [0, 1] including both endpoints."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DomainError("a grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise DomainError("grid points must be strictly increasing")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise DomainError("grid must start at 0 and end at 1")
        if np.max(np.abs(pts - np.linspace(0.0, 1.0, pts.size))) > 1e-9:
            raise DomainError("grid points are not uniformly spaced")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, num_points: int) -> "Grid":
        return cls(np.linspace(0.0, 1.0, num_points))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def step(self) -> float:
        return 1.0 / (self.points.size - 1)

    def trapezoid_weights(self) -> np.ndarray:
        """Composite trapezoid quadrature weights for this grid."""
        w = np.full(self.size, self.step)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def matches(self, other: "Grid") -> bool:
        # Grids are fully determined by their size (uniform on [0, 1]).
        return self.size == other.size


def _require_same_grid(a: Grid, b: Grid, what: str) -> None:
    if not a.matches(b):
        raise DimensionError(f"{what}: grids differ ({a.size} vs {b.size} points)")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A real function on [0, 1], stored as its values on a Grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _finite_array(self.values, "values", 1)
        if vals.size != self.grid.size:
            raise DimensionError(
                f"values have {vals.size} entries, grid has {self.grid.size} points"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.size))


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """n observed curves with scalar responses for one population.

    Curves are stored row-wise in an (n, G) array; all rows share `grid`.
    """

    grid: Grid
    curves: np.ndarray
    responses: np.ndarray
    label: str = ""

    def __post_init__(self):
        curves = _finite_array(self.curves, "curves", 2)
        responses = _finite_array(self.responses, "responses", 1)
        if curves.shape[0] < 1:
            raise DomainError("a dataset needs at least one curve")
        if curves.shape[1] != self.grid.size:
            raise DimensionError(
                f"curves have {curves.shape[1]} columns, grid has {self.grid.size} points"
            )
        if responses.size != curves.shape[0]:
            raise DimensionError("responses length must equal the number of curves")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "responses", responses)

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    def curve(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.curves[i])

    def subset(self, indices) -> "FunctionalDataset":
        idx = np.asarray(indices, dtype=int)
        return FunctionalDataset(self.grid, self.curves[idx], self.responses[idx], self.label)


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Discretized covariance kernel K(s, t) on a grid."""

    grid: Grid
    entries: np.ndarray

    def __post_init__(self):
        entries = _finite_array(self.entries, "entries", 2)
        G = self.grid.size
        if entries.shape != (G, G):
            raise DimensionError(f"covariance must be {G}x{G}, got {entries.shape}")
        asym = np.max(np.abs(entries - entries.T))
        if asym > SYMMETRY_TOL:
            raise ValidationError(f"covariance asymmetric beyond tolerance: {asym:.3e}")
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Leading eigenpairs of a covariance operator.

    Eigenvalues are nonincreasing with negatives clamped to zero;
    eigenfunctions (row k = k-th function) are orthonormal under the
    grid's trapezoid rule and sign-fixed so the entry of largest
    magnitude is positive.
    """

    grid: Grid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    source_weights: np.ndarray | None = None

    def __post_init__(self):
        ev = _finite_array(self.eigenvalues, "eigenvalues", 1)
        ef = _finite_array(self.eigenfunctions, "eigenfunctions", 2)
        if ef.shape != (ev.size, self.grid.size):
            raise DimensionError(
                f"eigenfunctions must be {(ev.size, self.grid.size)}, got {ef.shape}"
            )
        if np.any(ev < -EIGENVALUE_CLAMP_TOL):
            raise ValidationError("eigenvalue below the negative-noise tolerance")
        ev = np.maximum(ev, 0.0)
        if np.any(np.diff(ev) > 1e-12):
            raise ValidationError("eigenvalues must be nonincreasing")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "eigenfunctions", ef)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def function(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.eigenfunctions[k])

    def truncate(self, m: int) -> "EigenSystem":
        if m > self.size:
            raise DomainError(f"cannot truncate to {m} of {self.size} eigenpairs")
        return EigenSystem(
            self.grid, self.eigenvalues[:m], self.eigenfunctions[:m], self.source_weights
        )


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Projection scores of centered curves onto an eigenbasis."""

    scores: np.ndarray
    center: GridFunction
    basis: EigenSystem

    def __post_init__(self):
        scores = _finite_array(self.scores, "scores", 2)
        if scores.shape[1] > self.basis.size:
            raise DimensionError("more score columns than basis functions")
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def m(self) -> int:
        return self.scores.shape[1]


def inner_product(f: GridFunction, g: GridFunction) -> float:
    """Trapezoid approximation of the L2 inner product of f and g."""
    _require_same_grid(f.grid, g.grid, "inner_product")
    w = f.grid.trapezoid_weights()
    return float(np.dot(w * f.values, g.values))


def mean_function(data: FunctionalDataset) -> GridFunction:
    """Pointwise average of the dataset's curves."""
    return GridFunction(data.grid, data.curves.mean(axis=0))


def covariance_estimate(data: FunctionalDataset) -> CovMatrix:
    """Sample covariance kernel with divisor n - 1."""
    if data.n < 2:
        raise DomainError("covariance needs at least two curves")
    centered = data.curves - data.curves.mean(axis=0)
    entries = centered.T @ centered / (data.n - 1)
    entries = 0.5 * (entries + entries.T)
    return CovMatrix(data.grid, entries)


def pooled_covariance(sources: list[FunctionalDataset]) -> CovMatrix:
    """Sample-size weighted average of per-source covariance kernels."""
    if not sources:
        raise DomainError("pooled covariance needs at least one source")
    grid = sources[0].grid
    total = sum(src.n for src in sources)
    pooled = np.zeros((grid.size, grid.size))
    for src in sources:
        _require_same_grid(grid, src.grid, "pooled_covariance")
        pooled += (src.n / total) * covariance_estimate(src).entries
    return CovMatrix(grid, pooled)


def source_weights(sources: list[FunctionalDataset]) -> np.ndarray:
    """Pooling weights n_l / N for a list of sources."""
    sizes = np.array([src.n for src in sources], dtype=float)
    return sizes / sizes.sum()


def eigendecompose(
    cov: CovMatrix, m: int, weights: np.ndarray | None = None
) -> EigenSystem:
    """Top-m eigenpairs of the quadrature-weighted covariance operator.

    The kernel matrix K is symmetrized to B = W^{1/2} K W^{1/2} with W the
    diagonal of trapezoid weights; eigenvectors of B map back to
    quadrature-orthonormal eigenfunctions via W^{-1/2}.

    Parameters
    ----------
    cov : CovMatrix
        Discretized covariance kernel.
    m : int
        Number of leading eigenpairs to keep; must not exceed the grid size.
    weights : ndarray, optional
        Per-source pooling weights recorded on the result when the kernel
        came from pooled sources.
    """
    G = cov.grid.size
    if m < 1 or m > G:
        raise DomainError(f"m must be in [1, {G}], got {m}")
    sqrt_w = np.sqrt(cov.grid.trapezoid_weights())
    sym = sqrt_w[:, None] * cov.entries * sqrt_w[None, :]
    sym = 0.5 * (sym + sym.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(eigvals)[::-1][:m]
    eigvals = np.maximum(eigvals[order], 0.0)
    funcs = (eigvecs[:, order] / sqrt_w[:, None]).T
    for k in range(m):
        peak = np.argmax(np.abs(funcs[k]))
        if funcs[k, peak] < 0:
            funcs[k] = -funcs[k]
    return EigenSystem(cov.grid, eigvals, funcs, weights)


def compute_scores(data: FunctionalDataset, basis: EigenSystem, m: int) -> ScoreMatrix:
    """Project each curve, centered by the dataset mean, onto the basis."""
    if m < 1 or m > basis.size:
        raise DomainError(f"m must be in [1, {basis.size}], got {m}")
    _require_same_grid(data.grid, basis.grid, "compute_scores")
    center = mean_function(data)
    w = data.grid.trapezoid_weights()
    phi_w = (basis.eigenfunctions[:m] * w).T
    scores = (data.curves - center.values) @ phi_w
    return ScoreMatrix(scores, center, basis)
