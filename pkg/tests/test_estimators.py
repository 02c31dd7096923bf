"""System estimator tests: FGLS identities, robust fits, S-system baseline.

Statistical checks run against paired oracles on the same data (OLS,
fit_sure) rather than absolute constants; algebraic identities are held
to solver tolerance.
"""

import numpy as np
import pytest

from robust_sur import (
    Equation,
    NotPositiveDefiniteError,
    SurSystem,
    fit_fastsur,
    fit_sure,
    fit_surerob,
)
from robust_sur.estimators import _gls_normal, _solve_normal
from robust_sur.loss import efficiency_family
from robust_sur.regression import ols

from helpers import ar1, make_system


class TestFitSure:
    def test_identical_regressors_equals_ols(self):
        system, _ = make_system(80, 4, 3, seed=1, identical_x=True)
        fit = fit_sure(system)
        stacked_ols = np.concatenate([ols(eq).beta for eq in system.equations])
        np.testing.assert_allclose(fit.beta, stacked_ols, rtol=0, atol=1e-8)

    def test_single_equation_equals_ols(self):
        system, _ = make_system(60, 3, 1, seed=2, sigma=np.eye(1))
        fit = fit_sure(system)
        np.testing.assert_allclose(
            fit.beta, ols(system.equations[0]).beta, rtol=0, atol=1e-10
        )

    def test_diagonal_sigma_close_to_ols(self):
        # With cross-equation correlation absent, GLS and OLS estimate the
        # same thing; their gap is an order of magnitude below the OLS
        # standard error at n=2000.
        system, _ = make_system(2000, 3, 3, seed=3, sigma=np.eye(3))
        fit = fit_sure(system)
        stacked_ols = np.concatenate([ols(eq).beta for eq in system.equations])
        se = np.sqrt(np.diag(fit.beta_cov))
        assert np.all(np.abs(fit.beta - stacked_ols) <= 3 * se)

    def test_gls_invariant_to_sigma_scale(self):
        system, _ = make_system(50, 3, 3, seed=4)
        fit = fit_sure(system)
        sigma_inv = np.linalg.inv(fit.sigma1)
        a1, r1 = _gls_normal(system, sigma_inv)
        a2, r2 = _gls_normal(system, 7.3 * sigma_inv)
        b1 = _solve_normal(a1, r1, "GLS")
        b2 = _solve_normal(a2, r2, "GLS")
        np.testing.assert_allclose(b1, b2, rtol=1e-10)

    def test_sigma_convention_and_shapes(self):
        n, p, m = 70, 2, 3
        system, _ = make_system(n, p, m, seed=5)
        fit = fit_sure(system)
        assert fit.sigma1.shape == (m, m)
        np.testing.assert_allclose(
            fit.sigma2, fit.residuals.T @ fit.residuals / n, atol=1e-12
        )
        assert np.all(fit.cell_weights == 1.0)
        evals = np.linalg.eigvalsh(fit.beta_cov)
        assert np.all(evals > 0)

    def test_duplicate_equation_raises(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(40, 2))
        y = x @ np.array([1.0, -1.0]) + rng.normal(size=40)
        eq = Equation(response=y, design=x)
        system = SurSystem(equations=(eq, eq))
        with pytest.raises(NotPositiveDefiniteError) as err:
            fit_sure(system)
        assert err.value.eigenvalues is not None

    def test_regression_equivariance(self):
        system, _ = make_system(60, 3, 2, seed=7)
        fit = fit_sure(system)
        rng = np.random.default_rng(8)
        delta = rng.normal(size=system.total_p)
        parts = system.split_coefficients(delta)
        shifted = system.response_matrix() + np.column_stack(
            [eq.design @ d for eq, d in zip(system.equations, parts)]
        )
        fit2 = fit_sure(system.with_responses(shifted))
        np.testing.assert_allclose(fit2.beta, fit.beta + delta, atol=1e-6)


class TestFitSurerob:
    def test_clean_data_tracks_sure(self):
        system, beta = make_system(200, 3, 3, seed=10)
        rob = fit_surerob(system, seed=1)
        cls = fit_sure(system)
        se = np.sqrt(np.diag(cls.beta_cov))
        assert np.all(np.abs(rob.beta - cls.beta) <= 3 * se)
        assert rob.cell_weights.mean() > 0.9

    def test_cell_weights_self_consistent(self):
        system, _ = make_system(120, 3, 3, seed=11)
        fit = fit_surerob(system, seed=2)
        fam = efficiency_family()
        # Weights recompute exactly from the first-stage residuals; the
        # returned residuals come from the final beta, so rebuild stage 1.
        assert fit.cell_weights.shape == (120, 3)
        assert np.all((fit.cell_weights >= 0) & (fit.cell_weights <= 1))
        resid_final = fit.residuals
        w_final = fam.weight(resid_final / fit.scales[None, :])
        # final residuals differ from stage-1 residuals only through the
        # GLS update, so weights computed either way agree closely on
        # clean data
        assert np.mean(np.abs(w_final - fit.cell_weights)) < 0.1

    def test_regression_equivariance(self):
        system, _ = make_system(100, 2, 2, seed=12)
        fit = fit_surerob(system, seed=3)
        rng = np.random.default_rng(13)
        delta = rng.normal(size=system.total_p)
        parts = system.split_coefficients(delta)
        shifted = system.response_matrix() + np.column_stack(
            [eq.design @ d for eq, d in zip(system.equations, parts)]
        )
        fit2 = fit_surerob(system.with_responses(shifted), seed=3)
        np.testing.assert_allclose(fit2.beta, fit.beta + delta, atol=1e-6)
        np.testing.assert_allclose(fit2.cell_weights, fit.cell_weights, atol=1e-6)
        np.testing.assert_allclose(fit2.sigma2, fit.sigma2, atol=1e-6)

    def test_beats_sure_under_cell_contamination(self):
        # 10% of error cells pushed to +25: the classical fit breaks, the
        # cell-weighted fit stays near the truth. Fixed seed, paired data.
        n, p, m = 100, 3, 4
        system, beta = make_system(n, p, m, seed=14)
        rng = np.random.default_rng(15)
        resp = system.response_matrix().copy()
        flat = rng.choice(n * m, size=int(0.1 * n * m), replace=False)
        resp.ravel()[flat] = 25.0
        bad = system.with_responses(resp)
        truth = beta.ravel()
        rob = fit_surerob(bad, seed=4)
        cls = fit_sure(bad)
        err_rob = np.sum((rob.beta - truth) ** 2)
        err_cls = np.sum((cls.beta - truth) ** 2)
        assert err_rob < err_cls

    def test_weighting_modes_differ_but_agree_clean(self):
        system, _ = make_system(150, 2, 2, seed=16)
        sq = fit_surerob(system, seed=5, cell_weighting="squared")
        sr = fit_surerob(system, seed=5, cell_weighting="sqrt")
        assert np.max(np.abs(sq.beta - sr.beta)) < 0.1
        with pytest.raises(ValueError):
            fit_surerob(system, seed=5, cell_weighting="cubed")

    def test_seed_determinism(self):
        system, _ = make_system(90, 2, 2, seed=17)
        a = fit_surerob(system, seed=6)
        b = fit_surerob(system, seed=6)
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.sigma2, b.sigma2)


class TestFitFastsur:
    def test_clean_data_tracks_sure(self):
        system, _ = make_system(200, 2, 2, seed=20)
        fast = fit_fastsur(system, seed=1)
        cls = fit_sure(system)
        se = np.sqrt(np.diag(cls.beta_cov))
        assert np.all(np.abs(fast.beta - cls.beta) <= 3 * se)

    def test_no_inference_output(self):
        system, _ = make_system(80, 2, 2, seed=21)
        fit = fit_fastsur(system, seed=2)
        assert fit.beta_cov is None

    def test_det_path_monotone(self):
        system, _ = make_system(120, 3, 3, seed=22)
        fit = fit_fastsur(system, seed=3)
        path = np.array(fit.diagnostics["det_path"])
        assert np.all(np.diff(path) <= path[:-1] * 1e-10 + 1e-300)

    def test_beats_sure_under_row_contamination(self):
        # 10% of rows replaced by a large structural outlier direction.
        n, p, m = 100, 3, 3
        sigma = ar1(m, 0.6)
        system, beta = make_system(n, p, m, seed=23, sigma=sigma)
        evals, evecs = np.linalg.eigh(sigma)
        v = np.sqrt(evals[0]) * evecs[:, 0]
        rng = np.random.default_rng(24)
        rows = rng.choice(n, size=10, replace=False)
        resp = system.response_matrix().copy()
        designs = [eq.design for eq in system.equations]
        for i in range(m):
            resp[rows, i] = designs[i][rows] @ beta[i] + 50.0 * v[i]
        bad = system.with_responses(resp)
        truth = beta.ravel()
        fast = fit_fastsur(bad, seed=4)
        cls = fit_sure(bad)
        assert np.sum((fast.beta - truth) ** 2) < np.sum((cls.beta - truth) ** 2)

    def test_diagonal_affine_equivariance(self):
        system, _ = make_system(150, 2, 2, seed=25)
        scalers = np.array([2.5, 0.4])
        resp = system.response_matrix() * scalers[None, :]
        scaled = system.with_responses(resp)
        a = fit_fastsur(system, seed=5)
        b = fit_fastsur(scaled, seed=5)
        parts_a = system.split_coefficients(a.beta)
        parts_b = system.split_coefficients(b.beta)
        for i in range(2):
            np.testing.assert_allclose(
                parts_b[i], scalers[i] * parts_a[i], atol=1e-4, rtol=1e-4
            )
        np.testing.assert_allclose(
            b.sigma2,
            scalers[:, None] * a.sigma2 * scalers[None, :],
            rtol=1e-3,
            atol=1e-6,
        )

    def test_regression_equivariance(self):
        system, _ = make_system(90, 2, 2, seed=26)
        fit = fit_fastsur(system, seed=6)
        rng = np.random.default_rng(27)
        delta = rng.normal(size=system.total_p)
        parts = system.split_coefficients(delta)
        shifted = system.response_matrix() + np.column_stack(
            [eq.design @ d for eq, d in zip(system.equations, parts)]
        )
        fit2 = fit_fastsur(system.with_responses(shifted), seed=6)
        np.testing.assert_allclose(fit2.beta, fit.beta + delta, atol=1e-6)

    def test_too_few_rows_raises(self):
        from robust_sur.exceptions import EstimationError

        system, _ = make_system(6, 3, 3, seed=28)
        with pytest.raises(EstimationError):
            fit_fastsur(system, seed=7)
