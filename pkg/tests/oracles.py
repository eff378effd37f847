"""Independent reference implementations used by the tests.

These deliberately avoid the library's solver paths: the lasso oracle is
an exhaustive grid search with local refinement, and the least-squares
oracles are dense solves.
"""

import numpy as np


def lasso_objective(S, r, delta, tau):
    n = S.shape[0]
    resid = r - S @ delta
    return 0.5 * float(resid @ resid) / n + tau * float(np.abs(delta).sum())


def brute_force_lasso(S, r, tau, span=3.0, coarse=0.05, rounds=6):
    """Minimize the lasso objective by coarse grid search over
    [-span, span]^m followed by shrinking local grids (bisection-style
    refinement). Only sensible for m <= 3."""
    n, m = S.shape
    gram = S.T @ S / n
    c = S.T @ r / n
    yy = float(r @ r) / n

    def batch_objective(D):
        quad = 0.5 * np.einsum("ij,jk,ik->i", D, gram, D)
        return 0.5 * yy - D @ c + quad + tau * np.abs(D).sum(axis=1)

    axes = [np.arange(-span, span + coarse / 2, coarse)] * m
    best = None
    for _ in range(rounds + 1):
        mesh = np.meshgrid(*axes, indexing="ij")
        D = np.stack([g.ravel() for g in mesh], axis=1)
        vals = batch_objective(D)
        best = D[int(np.argmin(vals))]
        step = axes[0][1] - axes[0][0]
        axes = [b + np.linspace(-step, step, 21) for b in best]
    return best


def dense_least_squares(S, r):
    n = S.shape[0]
    return np.linalg.solve(S.T @ S / n, S.T @ r / n)
