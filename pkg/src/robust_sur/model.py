"""Containers for SUR systems and the Kronecker covariance operator.

A system holds m regression equations observed on the same n units. The
stacked form places the equations one under another, giving a block
diagonal design of shape (mn, P) with P = sum p_i; the stacked error
covariance is Sigma kron I_n, which is only ever applied through the
operator below, never materialized.

Intercepts are never implicit: an intercept is an explicit ones column in
the design, and the model-spec loader inserts it as the first column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import (
    DimensionError,
    NotPositiveDefiniteError,
    SpecificationError,
)

__all__ = [
    "Equation",
    "SurSystem",
    "StackedSystem",
    "KroneckerIdentityOperator",
    "stack",
    "residuals",
    "kronecker_omega",
    "system_from_frame",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Equation:
    """One regression equation: response vector and design matrix."""

    response: np.ndarray
    design: np.ndarray
    response_name: str = "y"
    coef_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _frozen(np.ravel(self.response))
        x = _frozen(self.design)
        if x.ndim != 2:
            raise DimensionError("design must be a 2-d array")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(
                f"equation '{self.response_name}': design has {x.shape[0]} rows "
                f"but the response has {y.shape[0]}"
            )
        if x.shape[1] == 0:
            raise DimensionError(f"equation '{self.response_name}': empty design")
        names = self.coef_names or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DimensionError(
                f"equation '{self.response_name}': {len(names)} coefficient names "
                f"for {x.shape[1]} design columns"
            )
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "coef_names", tuple(names))

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class SurSystem:
    """m equations sharing the same observation index."""

    equations: tuple[Equation, ...]

    def __post_init__(self):
        eqs = tuple(self.equations)
        if not eqs:
            raise SpecificationError("a system needs at least one equation")
        n = eqs[0].n
        for i, eq in enumerate(eqs):
            if eq.n != n:
                raise DimensionError(
                    f"equation {i} ('{eq.response_name}') has {eq.n} observations, "
                    f"equation 0 has {n}"
                )
            if not np.all(np.isfinite(eq.response)):
                raise SpecificationError(
                    f"equation {i} ('{eq.response_name}'): non-finite response values"
                )
            if not np.all(np.isfinite(eq.design)):
                raise SpecificationError(
                    f"equation {i} ('{eq.response_name}'): non-finite design values"
                )
        object.__setattr__(self, "equations", eqs)

    @property
    def m(self) -> int:
        return len(self.equations)

    @property
    def n(self) -> int:
        return self.equations[0].n

    @property
    def p_list(self) -> tuple[int, ...]:
        return tuple(eq.p for eq in self.equations)

    @property
    def total_p(self) -> int:
        return sum(self.p_list)

    def coef_offsets(self) -> tuple[int, ...]:
        """Start index of each equation's block inside a stacked vector."""
        starts = np.concatenate([[0], np.cumsum(self.p_list)[:-1]])
        return tuple(int(s) for s in starts)

    def split_coefficients(self, beta: np.ndarray) -> list[np.ndarray]:
        """Split a stacked coefficient vector into per-equation pieces."""
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.shape[0] != self.total_p:
            raise DimensionError(
                f"stacked coefficient vector has length {beta.shape[0]}, "
                f"expected {self.total_p}"
            )
        out = []
        at = 0
        for p in self.p_list:
            out.append(beta[at : at + p])
            at += p
        return out

    def response_matrix(self) -> np.ndarray:
        """Responses as an n x m matrix (one column per equation)."""
        return np.column_stack([eq.response for eq in self.equations])

    def with_responses(self, responses: np.ndarray) -> "SurSystem":
        """Same designs and names with replaced response columns."""
        responses = np.asarray(responses, dtype=float)
        if responses.shape != (self.n, self.m):
            raise DimensionError(
                f"response matrix must be {self.n} x {self.m}, "
                f"got {responses.shape}"
            )
        return SurSystem(
            tuple(
                Equation(
                    response=responses[:, i],
                    design=eq.design,
                    response_name=eq.response_name,
                    coef_names=eq.coef_names,
                )
                for i, eq in enumerate(self.equations)
            )
        )


@dataclass(frozen=True)
class StackedSystem:
    """Dense stacked form: y (mn,), block diagonal design (mn, P)."""

    response: np.ndarray
    design: np.ndarray
    offsets: tuple[int, ...]

    @property
    def total_p(self) -> int:
        return self.design.shape[1]


def stack(system: SurSystem) -> StackedSystem:
    """Materialize the stacked response and block diagonal design."""
    n, m, bigp = system.n, system.m, system.total_p
    y = np.concatenate([eq.response for eq in system.equations])
    x = np.zeros((m * n, bigp))
    offsets = system.coef_offsets()
    for i, eq in enumerate(system.equations):
        x[i * n : (i + 1) * n, offsets[i] : offsets[i] + eq.p] = eq.design
    return StackedSystem(response=_frozen(y), design=_frozen(x), offsets=offsets)


def residuals(system: SurSystem, beta: np.ndarray) -> np.ndarray:
    """Residual matrix (n x m) at a stacked coefficient vector."""
    parts = system.split_coefficients(beta)
    return np.column_stack(
        [eq.response - eq.design @ b for eq, b in zip(system.equations, parts)]
    )


class KroneckerIdentityOperator:
    """Applies (Sigma kron I_n) and its inverse to stacked vectors.

    Stacked vectors are ordered equation-major, so v reshapes to (m, n)
    with row i holding equation i's block; both products then reduce to an
    m x m action on the rows, costing O(m^2 n) instead of O((mn)^2).
    """

    def __init__(self, sigma: np.ndarray, n: int):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise DimensionError("sigma must be square")
        if not np.allclose(sigma, sigma.T, atol=1e-10):
            raise NotPositiveDefiniteError("sigma must be symmetric")
        if n <= 0:
            raise DimensionError("n must be positive")
        try:
            cho = linalg.cho_factor(sigma, lower=True)
        except linalg.LinAlgError:
            eigs = np.linalg.eigvalsh(sigma)
            raise NotPositiveDefiniteError(
                f"sigma is not positive definite (eigenvalues {eigs})",
                eigenvalues=eigs,
            ) from None
        self.sigma = _frozen(sigma)
        self.n = int(n)
        self.m = sigma.shape[0]
        self._cho = cho

    def _blocks(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            if v.shape[0] != self.m * self.n:
                raise DimensionError(
                    f"vector has length {v.shape[0]}, expected {self.m * self.n}"
                )
            return v.reshape(self.m, self.n)
        raise DimensionError("operator expects a stacked 1-d vector")

    def apply(self, v: np.ndarray) -> np.ndarray:
        """(Sigma kron I_n) v."""
        return (self.sigma @ self._blocks(v)).ravel()

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """(Sigma kron I_n)^-1 v = (Sigma^-1 kron I_n) v."""
        return linalg.cho_solve(self._cho, self._blocks(v)).ravel()


def kronecker_omega(sigma: np.ndarray, n: int) -> KroneckerIdentityOperator:
    """Operator form of Omega = Sigma kron I_n; validates Sigma is PD."""
    return KroneckerIdentityOperator(sigma, n)


# -- model-spec loading ---------------------------------------------------


def system_from_frame(frame, spec: dict) -> SurSystem:
    """Build a system from a column-named data table and a model spec.

    The spec is a mapping {"equations": [{"response": name,
    "regressors": [names...], "intercept": bool}, ...]}; intercept
    defaults to true and becomes an explicit leading ones column. Missing
    columns and non-finite cells raise SpecificationError naming them.
    """
    if not isinstance(spec, dict) or "equations" not in spec:
        raise SpecificationError("model spec must contain an 'equations' list")
    entries = spec["equations"]
    if not isinstance(entries, list) or not entries:
        raise SpecificationError("model spec 'equations' must be a nonempty list")

    available = list(frame.columns)
    missing: list[str] = []
    for entry in entries:
        for name in [entry.get("response")] + list(entry.get("regressors", [])):
            if not isinstance(name, str):
                raise SpecificationError(
                    "model spec column names must be strings, "
                    f"got {name!r}"
                )
            if name not in available and name not in missing:
                missing.append(name)
    if missing:
        raise SpecificationError(
            "columns not present in the data: " + ", ".join(missing)
        )

    used = sorted(
        {e["response"] for e in entries}
        | {r for e in entries for r in e.get("regressors", [])}
    )
    sub = frame[used].to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(sub))
    if bad.size:
        r, c = bad[0]
        raise SpecificationError(
            f"non-finite value in column '{used[c]}' at data row {int(r)}"
        )

    equations = []
    n = len(frame)
    for entry in entries:
        regs = list(entry.get("regressors", []))
        cols = [frame[r].to_numpy(dtype=float) for r in regs]
        names = list(regs)
        if entry.get("intercept", True):
            cols.insert(0, np.ones(n))
            names.insert(0, "(Intercept)")
        if not cols:
            raise SpecificationError(
                f"equation '{entry['response']}' has no regressors and no intercept"
            )
        equations.append(
            Equation(
                response=frame[entry["response"]].to_numpy(dtype=float),
                design=np.column_stack(cols),
                response_name=entry["response"],
                coef_names=tuple(names),
            )
        )
    return SurSystem(tuple(equations))
