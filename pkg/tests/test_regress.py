import numpy as np
import pytest

from oracles import brute_force_lasso, dense_least_squares, lasso_objective
from tlflr.errors import (
    DomainError,
    IllConditionedError,
    InvariantError,
    ValidationError,
)
from tlflr.funcore import (
    EigenSystem,
    FunctionalDataset,
    Grid,
    GridFunction,
    ScoreMatrix,
    compute_scores,
    eigendecompose,
    inner_product,
    mean_function,
    pooled_covariance,
    source_weights,
)
from tlflr.regress import (
    fit_flr,
    fit_initial,
    fit_tlflr,
    lasso_cd,
    predict,
    soft_threshold,
)


def cosine_system(grid, m):
    """Analytic cosine eigensystem; orthonormal to quadrature accuracy."""
    t = grid.points
    funcs = np.stack([np.sqrt(2) * np.cos(k * np.pi * t) for k in range(1, m + 1)])
    return EigenSystem(grid, np.ones(m), funcs)


def score_matrix(scores, grid=None, m=None):
    m = m if m is not None else scores.shape[1]
    grid = grid or Grid.uniform(50)
    basis = cosine_system(grid, m)
    return ScoreMatrix(np.asarray(scores, float), GridFunction.zero(grid), basis)


def test_soft_threshold_examples():
    assert soft_threshold(5.0, 2.0) == 3.0
    assert soft_threshold(-1.0, 2.0) == 0.0
    assert soft_threshold(0.5, 0.0) == 0.5


class TestLassoCd:
    def test_unpenalized_matches_dense_solve(self):
        rng = np.random.default_rng(0)
        S = rng.standard_normal((40, 5))
        r = rng.standard_normal(40)
        sol = lasso_cd(score_matrix(S), r, tau=0.0)
        np.testing.assert_allclose(sol.delta, dense_least_squares(S, r), atol=1e-8)
        assert sol.converged

    def test_large_tau_gives_zero(self):
        rng = np.random.default_rng(1)
        S = rng.standard_normal((20, 4))
        r = rng.standard_normal(20)
        tau = np.max(np.abs(S.T @ r)) / 20 + 1e-9
        sol = lasso_cd(score_matrix(S), r, tau=tau)
        assert np.all(sol.delta == 0.0)

    def test_handcrafted_against_brute_force(self):
        # m = 2, n = 6 instance from fixed values, tau = 0.1
        S = np.array(
            [
                [1.0, 0.5],
                [-0.3, 1.2],
                [0.8, -0.7],
                [0.1, 0.9],
                [-1.1, 0.2],
                [0.6, 0.4],
            ]
        )
        r = np.array([0.9, -0.4, 0.3, 0.8, -0.2, 0.1])
        sol = lasso_cd(score_matrix(S), r, tau=0.1)
        expected = brute_force_lasso(S, r, 0.1)
        np.testing.assert_allclose(sol.delta, expected, atol=1e-4)
        # the solver should not do worse than the oracle's objective
        assert lasso_objective(S, r, sol.delta, 0.1) <= lasso_objective(
            S, r, expected, 0.1
        ) + 1e-10

    def test_zero_column_with_zero_tau_errors(self):
        S = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(IllConditionedError):
            lasso_cd(score_matrix(S), np.array([1.0, 0.5, 0.2]), tau=0.0)

    def test_zero_column_with_positive_tau_stays_zero(self):
        S = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]])
        sol = lasso_cd(score_matrix(S), np.array([1.0, 0.5, 0.2]), tau=0.05)
        assert sol.delta[1] == 0.0
        assert sol.converged

    def test_nonfinite_inputs_rejected(self):
        S = np.ones((3, 2))
        with pytest.raises(ValidationError):
            lasso_cd(score_matrix(S), np.array([1.0, np.nan, 0.0]), tau=0.1)

    def test_negative_tau_rejected(self):
        with pytest.raises(DomainError):
            lasso_cd(score_matrix(np.ones((3, 1))), np.ones(3), tau=-0.1)

    def test_objective_trace_nonincreasing(self):
        rng = np.random.default_rng(4)
        S = rng.standard_normal((30, 6)) @ np.diag([1, 1, 0.5, 0.5, 0.2, 0.2])
        r = rng.standard_normal(30)
        sol = lasso_cd(score_matrix(S), r, tau=0.02)
        assert np.all(np.diff(sol.objective_trace) <= 1e-12)

    def test_kkt_certificate(self):
        rng = np.random.default_rng(5)
        for tau in (0.0, 0.03, 0.3):
            S = rng.standard_normal((25, 4))
            r = rng.standard_normal(25)
            sol = lasso_cd(score_matrix(S), r, tau=tau, tol=1e-8)
            assert sol.converged
            grad = S.T @ (r - S @ sol.delta) / 25
            active = sol.delta != 0
            if np.any(~active):
                assert np.max(np.abs(grad[~active])) <= tau + 1e-7
            if np.any(active):
                assert np.max(np.abs(grad[active] - tau * np.sign(sol.delta[active]))) <= 1e-7


class TestFitInitial:
    def grids(self):
        return Grid.uniform(60)

    def test_constant_responses_give_zero(self):
        # orthogonal score columns keep the pooled Gram diagonal
        q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((10, 3)))
        w = fit_initial([score_matrix(q, m=3)], [np.full(10, 4.2)])
        np.testing.assert_allclose(w, 0.0, atol=1e-12)

    def test_response_equal_to_first_score_column(self):
        # orthogonal, centered score columns; Y = first column
        q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((12, 3)))
        q -= q.mean(axis=0)
        q, _ = np.linalg.qr(q)
        sm = score_matrix(q, m=3)
        w = fit_initial([sm], [q[:, 0]])
        np.testing.assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-9)

    def test_noiseless_recovery_two_sources(self):
        # scores from a genuine pooled FPCA so the Gram is diagonal
        rng = np.random.default_rng(8)
        grid = Grid.uniform(90)
        t = grid.points
        basis = np.stack([np.sqrt(2) * np.cos(k * np.pi * t) for k in range(1, 5)])
        sources = []
        for n in (30, 45):
            xi = rng.standard_normal((n, 4)) * np.array([1.0, 0.6, 0.3, 0.2])
            sources.append(FunctionalDataset(grid, xi @ basis, np.zeros(n)))
        es = eigendecompose(pooled_covariance(sources), 4, source_weights(sources))
        mats = [compute_scores(src, es, 4) for src in sources]
        w0 = np.array([2.0, -1.0, 0.5, 0.25])
        responses = [sm.scores @ w0 for sm in mats]
        w = fit_initial(mats, responses)
        np.testing.assert_allclose(w, w0, atol=1e-8)
        # oracle: dense pooled normal equations, no diagonal shortcut
        total = sum(sm.n for sm in mats)
        G = sum(
            (sm.n / total) / (sm.n - 1) * (sm.scores.T @ sm.scores) for sm in mats
        )
        b = sum(
            (sm.n / total) / (sm.n - 1) * (sm.scores.T @ (y - y.mean()))
            for sm, y in zip(mats, responses)
        )
        np.testing.assert_allclose(w, np.linalg.solve(G, b), atol=1e-8)

    def test_off_diagonal_gram_rejected(self):
        rng = np.random.default_rng(1)
        S = rng.standard_normal((15, 3))
        S[:, 1] = S[:, 0] + 0.01 * S[:, 1]  # heavily correlated columns
        with pytest.raises(InvariantError):
            fit_initial([score_matrix(S, m=3)], [rng.standard_normal(15)])


def make_target_and_sources(seed, n=80, n_l=60, num_sources=2, m_true=4, noise=0.0):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(100)
    t = grid.points
    basis = np.stack([np.sqrt(2) * np.cos(k * np.pi * t) for k in range(1, m_true + 1)])
    lam_sqrt = np.arange(1, m_true + 1) ** -1.0
    b = np.array([2.0, -1.0, 0.5, -0.25])[:m_true]

    def draw(n_obs):
        xi = rng.standard_normal((n_obs, m_true)) * lam_sqrt
        y = xi @ b + noise * rng.standard_normal(n_obs)
        return FunctionalDataset(grid, xi @ basis, y)

    target = draw(n)
    sources = [draw(n_l) for _ in range(num_sources)]
    slope = GridFunction(grid, b @ basis)
    return target, sources, slope


class TestFitTlflr:
    def test_huge_tau_reduces_to_initial_estimator(self):
        target, sources, _ = make_target_and_sources(0, noise=0.3)
        est = fit_tlflr(target, sources, m=4, tau=1e6)
        es = eigendecompose(pooled_covariance(sources), 4, source_weights(sources))
        mats = [compute_scores(src, es, 4) for src in sources]
        w = fit_initial(mats, [src.responses for src in sources])
        np.testing.assert_allclose(est.coefficients, w, atol=1e-12)

    def test_noiseless_recovery_close_to_projection_oracle(self):
        target, sources, slope = make_target_and_sources(1, n=400, n_l=400, noise=0.0)
        est = fit_tlflr(target, sources, m=4, tau=0.0)
        err = est.slope_curve.values - slope.values
        w = target.grid.trapezoid_weights()
        fit_mise = float(w @ (err * err))
        # oracle: project the true slope onto the estimated basis
        proj = sum(
            inner_product(slope, est.basis.function(k)) * est.basis.eigenfunctions[k]
            for k in range(4)
        )
        perr = proj - slope.values
        oracle_mise = float(w @ (perr * perr))
        assert fit_mise <= 10 * max(oracle_mise, 1e-18)

    def test_tau_zero_matches_dense_solve_on_copied_targets(self):
        target, _, _ = make_target_and_sources(2, n=100, noise=0.2)
        sources = [
            make_target_and_sources(seed, n=100, noise=0.2)[0] for seed in (3, 4)
        ]
        est = fit_tlflr(target, sources, m=4, tau=0.0)
        es = eigendecompose(pooled_covariance(sources), 4, source_weights(sources))
        mats = [compute_scores(src, es, 4) for src in sources]
        w = fit_initial(mats, [src.responses for src in sources])
        tgt_scores = compute_scores(target, es, 4)
        yc = target.responses - target.responses.mean()
        delta = dense_least_squares(tgt_scores.scores, yc - tgt_scores.scores @ w)
        np.testing.assert_allclose(est.coefficients, w + delta, atol=1e-8)

    def test_sign_flip_invariance(self):
        target, sources, _ = make_target_and_sources(5, noise=0.2)
        es = eigendecompose(pooled_covariance(sources), 4, source_weights(sources))
        flipped = EigenSystem(
            es.grid,
            es.eigenvalues,
            es.eigenfunctions * np.array([1, -1, 1, -1])[:, None],
            es.source_weights,
        )

        def chain(basis):
            mats = [compute_scores(src, basis, 4) for src in sources]
            w = fit_initial(mats, [src.responses for src in sources])
            tgt = compute_scores(target, basis, 4)
            yc = target.responses - target.responses.mean()
            sol = lasso_cd(tgt, yc - tgt.scores @ w, tau=0.05)
            return (w + sol.delta) @ basis.eigenfunctions

        np.testing.assert_allclose(chain(es), chain(flipped), atol=1e-10)

    def test_requires_sources(self):
        target, _, _ = make_target_and_sources(6)
        with pytest.raises(DomainError):
            fit_tlflr(target, [], m=2, tau=0.1)

    def test_m_too_large_for_source_rank(self):
        rng = np.random.default_rng(7)
        grid = Grid.uniform(40)
        # rank-2 source data cannot support m = 4
        basis = np.stack([np.sqrt(2) * np.cos(k * np.pi * grid.points) for k in (1, 2)])
        xi = rng.standard_normal((20, 2))
        src = FunctionalDataset(grid, xi @ basis, rng.standard_normal(20))
        target = FunctionalDataset(grid, rng.standard_normal((10, 40)), rng.standard_normal(10))
        with pytest.raises(IllConditionedError):
            fit_tlflr(target, [src], m=4, tau=0.1)


class TestFitFlr:
    def test_constant_responses_give_zero_slope(self):
        target, _, _ = make_target_and_sources(0, noise=0.0)
        flat = FunctionalDataset(target.grid, target.curves, np.full(target.n, 2.5))
        est = fit_flr(flat, 3)
        np.testing.assert_allclose(est.slope_curve.values, 0.0, atol=1e-12)

    def test_m1_matches_independent_quadrature(self):
        target, _, _ = make_target_and_sources(3, noise=0.3)
        est = fit_flr(target, 1)
        # independent path: np.trapezoid quadrature of ghat phi / lambda
        from tlflr.funcore import covariance_estimate

        es = eigendecompose(covariance_estimate(target), 1)
        centered = target.curves - target.curves.mean(axis=0)
        yc = target.responses - target.responses.mean()
        ghat = centered.T @ yc / (target.n - 1)
        coef = np.trapezoid(ghat * es.eigenfunctions[0], target.grid.points)
        coef /= es.eigenvalues[0]
        assert est.coefficients[0] == pytest.approx(coef, abs=1e-10)

    def test_consistency_noiseless_single_component(self):
        rng = np.random.default_rng(12)
        grid = Grid.uniform(100)
        t = grid.points
        phi1 = np.sqrt(2) * np.cos(np.pi * t)
        phi2 = np.sqrt(2) * np.cos(2 * np.pi * t)
        xi = rng.standard_normal((2000, 2)) * np.array([1.0, 0.5])
        curves = xi @ np.stack([phi1, phi2])
        responses = 4.0 * xi[:, 0]  # Y = <X, 4 phi1> exactly
        est = fit_flr(FunctionalDataset(grid, curves, responses), 1)
        # the fitted slope is sign-invariant; align the estimated
        # eigenfunction with phi1 before comparing the coefficient
        sign = np.sign(est.basis.eigenfunctions[0] @ phi1)
        assert sign * est.coefficients[0] == pytest.approx(4.0, abs=0.05)

    def test_rank_deficient_target_errors(self):
        rng = np.random.default_rng(1)
        grid = Grid.uniform(30)
        phi = np.sqrt(2) * np.cos(np.pi * grid.points)
        xi = rng.standard_normal(10)
        data = FunctionalDataset(grid, np.outer(xi, phi), rng.standard_normal(10))
        with pytest.raises(IllConditionedError):
            fit_flr(data, 3)


class TestPredict:
    @pytest.fixture()
    def fitted(self):
        target, sources, _ = make_target_and_sources(9, noise=0.2)
        return target, fit_tlflr(target, sources, m=3, tau=0.05)

    def test_mean_curve_predicts_mean_response(self, fitted):
        target, est = fitted
        assert predict(est, mean_function(target)) == pytest.approx(
            target.responses.mean(), abs=1e-12
        )

    def test_zero_slope_predicts_mean(self, fitted):
        target, est = fitted
        from dataclasses import replace

        zero = replace(
            est,
            slope_curve=GridFunction.zero(target.grid),
            coefficients=None,
            basis=None,
        )
        curve = GridFunction(target.grid, np.sin(7 * target.grid.points))
        assert predict(zero, curve) == pytest.approx(target.responses.mean(), abs=1e-12)

    def test_unit_shift_along_first_eigenfunction(self, fitted):
        target, est = fitted
        from dataclasses import replace

        phi1 = est.basis.eigenfunctions[0]
        unit = replace(est, slope_curve=GridFunction(target.grid, phi1), coefficients=None, basis=None)
        curve = GridFunction(target.grid, est.curve_mean.values + 2 * phi1)
        expected = target.responses.mean() + 2.0
        assert predict(unit, curve) == pytest.approx(expected, abs=1e-6)
