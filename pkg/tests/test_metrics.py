"""Metric and inference tests against closed forms and direct oracles."""

import numpy as np
import pytest
from scipy import stats

from robust_sur import InferenceUnsupportedError, NotPositiveDefiniteError
from robust_sur.metrics import flag_cells, kl_divergence, mse, system_inference
from robust_sur.exceptions import DimensionError
from robust_sur.regression import ols

from helpers import make_system
from robust_sur import fit_fastsur, fit_sure, fit_surerob


class TestMse:
    def test_zero_at_truth(self):
        beta = np.array([1.0, 2.0, 3.0])
        assert mse([beta, beta.copy()], beta) == 0.0

    def test_unit_offset(self):
        beta = np.zeros(4)
        est = beta.copy()
        est[2] = 1.0
        assert mse([est], beta) == 1.0

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(0)
        beta = rng.normal(size=6)
        ests = [rng.normal(size=6) for _ in range(3)]
        direct = sum(np.sum((e - beta) ** 2) for e in ests) / 3
        assert abs(mse(ests, beta) - direct) < 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        beta = rng.normal(size=5)
        ests = [rng.normal(size=5) for _ in range(4)]
        assert mse(ests, beta) == mse(ests[::-1], beta)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            mse([np.zeros(3)], np.zeros(4))
        with pytest.raises(DimensionError):
            mse([], np.zeros(2))


class TestKlDivergence:
    def test_identity_case(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 4))
        sigma = a @ a.T + 4 * np.eye(4)
        assert abs(kl_divergence(sigma, sigma)) < 1e-12

    def test_closed_form_two_i(self):
        val = kl_divergence(2 * np.eye(2), np.eye(2))
        assert abs(val - (2.0 - 2.0 * np.log(2.0))) < 1e-12

    def test_positive_off_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.normal(size=(3, 3))
            s = a @ a.T + 3 * np.eye(3)
            b = rng.normal(size=(3, 3))
            sigma = b @ b.T + 3 * np.eye(3)
            assert kl_divergence(s, sigma) > -1e-10

    def test_congruence_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 3))
        s = a @ a.T + 3 * np.eye(3)
        b = rng.normal(size=(3, 3))
        sigma = b @ b.T + 3 * np.eye(3)
        t = rng.normal(size=(3, 3)) + 2 * np.eye(3)
        lhs = kl_divergence(s, sigma)
        rhs = kl_divergence(t.T @ s @ t, t.T @ sigma @ t)
        assert abs(lhs - rhs) < 1e-8

    def test_not_pd_raises(self):
        with pytest.raises(NotPositiveDefiniteError):
            kl_divergence(np.diag([1.0, -1.0]), np.eye(2))
        with pytest.raises(DimensionError):
            kl_divergence(np.eye(2), np.eye(3))


class TestSystemInference:
    def test_single_equation_matches_ols_formula(self):
        system, _ = make_system(60, 3, 1, seed=30, sigma=np.eye(1))
        fit = fit_sure(system)
        table = system_inference(fit, system).coefficients
        eq = system.equations[0]
        n = eq.n
        beta = ols(eq).beta
        resid = eq.response - eq.design @ beta
        var = np.diag(np.linalg.inv(eq.design.T @ eq.design)) * (resid @ resid / n)
        z = beta / np.sqrt(var)
        p = 2 * stats.norm.sf(np.abs(z))
        np.testing.assert_allclose(table["estimate"], beta, atol=1e-10)
        np.testing.assert_allclose(table["z"], z, atol=1e-10)
        np.testing.assert_allclose(table["p_value"], p, atol=1e-10)

    def test_noise_free_system_r2_one(self):
        rng = np.random.default_rng(31)
        from robust_sur import Equation, SurSystem

        eqs = []
        for i in range(2):
            x = rng.normal(size=(50, 2))
            beta = rng.normal(size=2)
            noise = rng.normal(size=50) * 1e-8
            eqs.append(Equation(response=x @ beta + noise, design=x))
        system = SurSystem(equations=tuple(eqs))
        fit = fit_sure(system)
        inf = system_inference(fit, system)
        assert np.all(inf.equations["r_squared"] > 1 - 1e-9)
        assert inf.system_r_squared > 1 - 1e-9

    def test_pvalues_in_unit_interval_and_r2_bounds(self):
        system, _ = make_system(80, 3, 3, seed=32)
        fit = fit_sure(system)
        inf = system_inference(fit, system)
        p = inf.coefficients["p_value"].to_numpy()
        assert np.all((p >= 0) & (p <= 1))
        eqs = inf.equations
        assert np.all(eqs["r_squared"] <= 1)
        assert np.all(eqs["adj_r_squared"] <= eqs["r_squared"] + 1e-12)

    def test_true_zero_coefficients_not_all_significant(self):
        # with the truth at zero, rejections at the 5% level stay near the
        # nominal rate: certainly not every coefficient looks significant
        from robust_sur import Equation, SurSystem

        pvals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(60, 2))
            y = rng.normal(size=60)
            system = SurSystem(equations=(Equation(response=y, design=x),))
            fit = fit_sure(system)
            p = system_inference(fit, system).coefficients["p_value"].to_numpy()
            pvals.extend(list(p))
        pvals = np.array(pvals)
        assert np.mean(pvals < 0.05) < 0.3
        assert np.max(pvals) > 0.2

    def test_surerob_weighted_r2(self):
        system, _ = make_system(100, 2, 2, seed=33)
        fit = fit_surerob(system, seed=1)
        inf = system_inference(fit, system)
        assert inf.coefficients.shape[0] == system.total_p
        assert np.all(inf.equations["r_squared"] <= 1)

    def test_fastsur_unsupported(self):
        system, _ = make_system(60, 2, 2, seed=34)
        fit = fit_fastsur(system, seed=1)
        with pytest.raises(InferenceUnsupportedError, match="fastsur"):
            system_inference(fit, system)


class TestFlagCells:
    def test_all_ones_no_flags(self):
        system, _ = make_system(40, 2, 2, seed=35)
        fit = fit_sure(system)
        flags = flag_cells(fit)
        assert flags.cell_fraction == 0.0
        assert flags.row_fraction == 0.0

    def test_counting(self):
        system, _ = make_system(10, 2, 4, seed=36)
        fit = fit_sure(system)
        w = fit.cell_weights.copy()
        w[3, 1] = 0.4
        from dataclasses import replace

        fit2 = replace(fit, cell_weights=w)
        flags = flag_cells(fit2)
        assert abs(flags.cell_fraction - 0.025) < 1e-12
        assert abs(flags.row_fraction - 0.1) < 1e-12

    def test_row_fraction_dominates_cell_fraction(self):
        system, beta = make_system(100, 2, 4, seed=37)
        rng = np.random.default_rng(38)
        resp = system.response_matrix().copy()
        flat = rng.choice(resp.size, size=int(0.1 * resp.size), replace=False)
        resp.ravel()[flat] = 30.0
        fit = fit_surerob(system.with_responses(resp), seed=2)
        flags = flag_cells(fit)
        assert flags.row_fraction >= flags.cell_fraction
        assert flags.cell_fraction > 0.05
