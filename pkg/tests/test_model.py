"""System containers, stacking, and the Kronecker operator.

The operator oracle is the dense np.kron product, affordable for the small
shapes used here.
"""

import numpy as np
import pandas as pd
import pytest

from robust_sur.exceptions import (
    DimensionError,
    NotPositiveDefiniteError,
    SpecificationError,
)
from robust_sur.model import (
    Equation,
    KroneckerIdentityOperator,
    SurSystem,
    kronecker_omega,
    residuals,
    stack,
    system_from_frame,
)


def toy_system(n=7, ps=(2, 3, 1), seed=5):
    rng = np.random.default_rng(seed)
    eqs = []
    for i, p in enumerate(ps):
        x = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        eqs.append(Equation(response=y, design=x, response_name=f"y{i + 1}"))
    return SurSystem(tuple(eqs))


class TestContainers:
    def test_dimensions_and_offsets(self):
        sys = toy_system()
        assert (sys.n, sys.m) == (7, 3)
        assert sys.p_list == (2, 3, 1)
        assert sys.total_p == 6
        assert sys.coef_offsets() == (0, 2, 5)

    def test_mismatched_lengths_name_the_equation(self):
        eq0 = Equation(response=np.zeros(5), design=np.ones((5, 1)))
        eq1 = Equation(response=np.zeros(6), design=np.ones((6, 1)), response_name="z")
        with pytest.raises(DimensionError, match="equation 1 .'z'."):
            SurSystem((eq0, eq1))

    def test_nonfinite_values_rejected(self):
        y = np.zeros(4)
        x = np.ones((4, 1))
        x[2, 0] = np.nan
        with pytest.raises(SpecificationError, match="non-finite design"):
            SurSystem((Equation(response=y, design=x),))

    def test_empty_system_rejected(self):
        with pytest.raises(SpecificationError):
            SurSystem(())

    def test_arrays_are_immutable(self):
        sys = toy_system()
        with pytest.raises(ValueError):
            sys.equations[0].design[0, 0] = 9.9

    def test_split_round_trips(self):
        sys = toy_system()
        beta = np.arange(6, dtype=float)
        parts = sys.split_coefficients(beta)
        assert [len(b) for b in parts] == [2, 3, 1]
        np.testing.assert_array_equal(np.concatenate(parts), beta)

    def test_with_responses_swaps_columns(self):
        sys = toy_system()
        new = np.arange(21, dtype=float).reshape(7, 3)
        swapped = sys.with_responses(new)
        np.testing.assert_array_equal(swapped.response_matrix(), new)
        np.testing.assert_array_equal(
            swapped.equations[1].design, sys.equations[1].design
        )


class TestStack:
    def test_block_structure_exact(self):
        sys = toy_system()
        stacked = stack(sys)
        n = sys.n
        assert stacked.design.shape == (21, 6)
        np.testing.assert_array_equal(
            stacked.design[:n, :2], sys.equations[0].design
        )
        np.testing.assert_array_equal(
            stacked.design[n : 2 * n, 2:5], sys.equations[1].design
        )
        # off blocks are exactly zero
        assert np.all(stacked.design[:n, 2:] == 0.0)
        np.testing.assert_array_equal(
            stacked.response,
            np.concatenate([eq.response for eq in sys.equations]),
        )

    def test_residuals_match_per_equation(self):
        sys = toy_system()
        beta = np.linspace(-1.0, 1.0, 6)
        r = residuals(sys, beta)
        parts = sys.split_coefficients(beta)
        for i, eq in enumerate(sys.equations):
            np.testing.assert_allclose(
                r[:, i], eq.response - eq.design @ parts[i], atol=0.0
            )
        # equivalent stacked computation
        stacked = stack(sys)
        np.testing.assert_allclose(
            r.T.ravel(), stacked.response - stacked.design @ beta, atol=1e-14
        )


class TestKroneckerOperator:
    @pytest.mark.parametrize("m,n", [(1, 1), (2, 3), (3, 5), (4, 5)])
    def test_matches_dense_kron(self, m, n):
        rng = np.random.default_rng(m * 10 + n)
        a = rng.standard_normal((m, m))
        sigma = a @ a.T + m * np.eye(m)
        op = kronecker_omega(sigma, n)
        dense = np.kron(sigma, np.eye(n))
        v = rng.standard_normal(m * n)
        np.testing.assert_allclose(op.apply(v), dense @ v, atol=1e-10)
        np.testing.assert_allclose(
            op.apply_inverse(v), np.linalg.solve(dense, v), atol=1e-10
        )

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 3))
        sigma = a @ a.T + 3 * np.eye(3)
        op = KroneckerIdentityOperator(sigma, 11)
        v = rng.standard_normal(33)
        np.testing.assert_allclose(op.apply_inverse(op.apply(v)), v, atol=1e-12)

    def test_rejects_indefinite_sigma(self):
        sigma = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        with pytest.raises(NotPositiveDefiniteError) as err:
            kronecker_omega(sigma, 4)
        assert err.value.eigenvalues is not None
        assert min(err.value.eigenvalues) < 0.0

    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionError):
            kronecker_omega(np.ones((2, 3)), 4)
        op = kronecker_omega(np.eye(2), 4)
        with pytest.raises(DimensionError):
            op.apply(np.zeros(7))


class TestModelSpecLoading:
    def frame(self):
        rng = np.random.default_rng(2)
        return pd.DataFrame(
            rng.standard_normal((9, 4)), columns=["wage", "exp", "edu", "iq"]
        )

    def test_builds_expected_designs(self):
        df = self.frame()
        spec = {
            "equations": [
                {"response": "wage", "regressors": ["exp", "edu"], "intercept": True},
                {"response": "iq", "regressors": ["edu"], "intercept": False},
            ]
        }
        sys = system_from_frame(df, spec)
        assert sys.m == 2 and sys.n == 9
        assert sys.equations[0].coef_names == ("(Intercept)", "exp", "edu")
        np.testing.assert_array_equal(sys.equations[0].design[:, 0], np.ones(9))
        np.testing.assert_array_equal(sys.equations[0].design[:, 1], df["exp"])
        assert sys.equations[1].coef_names == ("edu",)
        np.testing.assert_array_equal(sys.equations[1].response, df["iq"])

    def test_intercept_defaults_to_true(self):
        df = self.frame()
        spec = {"equations": [{"response": "wage", "regressors": ["edu"]}]}
        sys = system_from_frame(df, spec)
        assert sys.equations[0].coef_names[0] == "(Intercept)"

    def test_missing_columns_are_all_named(self):
        df = self.frame()
        spec = {
            "equations": [
                {"response": "wage", "regressors": ["tenure", "union"]},
            ]
        }
        with pytest.raises(SpecificationError, match="tenure, union"):
            system_from_frame(df, spec)

    def test_nonfinite_cell_is_located(self):
        df = self.frame()
        df.loc[4, "edu"] = np.inf
        spec = {"equations": [{"response": "wage", "regressors": ["edu"]}]}
        with pytest.raises(SpecificationError, match="column 'edu' at data row 4"):
            system_from_frame(df, spec)

    def test_rejects_empty_or_malformed_spec(self):
        df = self.frame()
        with pytest.raises(SpecificationError):
            system_from_frame(df, {})
        with pytest.raises(SpecificationError):
            system_from_frame(df, {"equations": []})
        with pytest.raises(SpecificationError):
            system_from_frame(
                df, {"equations": [{"response": "wage", "regressors": [3]}]}
            )
