"""Study metrics and fit inference: MSE, scatter divergence, z-tables.

The divergence is the Kullback-Leibler distance between two centered
Gaussians with covariances S and Sigma,

    delta(S, Sigma) = trace(S Sigma^-1) - log det(S Sigma^-1) - m,

zero exactly at S = Sigma and invariant under joint congruence.  The
inference table reports normal-reference z-tests from a fit's coefficient
covariance; the casewise S baseline carries no coefficient covariance, so
asking for its inference raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .estimators import SurFit
from .exceptions import (
    DimensionError,
    InferenceUnsupportedError,
    NotPositiveDefiniteError,
)
from .model import SurSystem, kronecker_omega

__all__ = [
    "mse",
    "kl_divergence",
    "InferenceResult",
    "system_inference",
    "FlaggedCells",
    "flag_cells",
]


def mse(estimates, true_beta: np.ndarray) -> float:
    """Mean squared Euclidean error of a list of estimates.

    (1/N) sum_r ||beta_r - beta||^2 over the replication list.
    """
    true_beta = np.asarray(true_beta, dtype=float).ravel()
    arrs = [np.asarray(b, dtype=float).ravel() for b in estimates]
    if not arrs:
        raise DimensionError("need at least one estimate")
    for i, b in enumerate(arrs):
        if b.shape != true_beta.shape:
            raise DimensionError(
                f"estimate {i} has length {b.shape[0]}, "
                f"expected {true_beta.shape[0]}"
            )
    diffs = np.stack(arrs) - true_beta[None, :]
    return float(np.mean(np.sum(diffs * diffs, axis=1)))


def _cholesky_pd(a: np.ndarray, what: str):
    a = np.asarray(a, dtype=float)
    try:
        return linalg.cholesky((a + a.T) / 2.0, lower=True)
    except linalg.LinAlgError as exc:
        evals = np.linalg.eigvalsh((a + a.T) / 2.0)
        raise NotPositiveDefiniteError(
            f"{what} is not positive definite", eigenvalues=evals
        ) from exc


def kl_divergence(s: np.ndarray, sigma: np.ndarray) -> float:
    """trace(S Sigma^-1) - log det(S Sigma^-1) - m, via factorizations."""
    s = np.asarray(s, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if s.shape != sigma.shape or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(
            f"covariance shapes must match and be square, got {s.shape} "
            f"and {sigma.shape}"
        )
    m = s.shape[0]
    low_s = _cholesky_pd(s, "first covariance argument")
    low_sig = _cholesky_pd(sigma, "second covariance argument")
    # trace(S Sigma^-1) through triangular solves; log det from the
    # factor diagonals, avoiding products of the matrices themselves
    half = linalg.solve_triangular(low_sig, low_s, lower=True)
    trace = float(np.sum(half * half))
    logdet = 2.0 * float(
        np.sum(np.log(np.diag(low_s))) - np.sum(np.log(np.diag(low_sig)))
    )
    return trace - logdet - m


@dataclass(frozen=True)
class InferenceResult:
    """Coefficient table, per-equation fit quality, and the system R^2."""

    coefficients: pd.DataFrame  # equation, coefficient, estimate, std_error, z, p_value
    equations: pd.DataFrame  # equation, r_squared, adj_r_squared
    system_r_squared: float


def system_inference(fit: SurFit, system: SurSystem) -> InferenceResult:
    """Normal-reference z-tests and R-squared summaries for a fit.

    Per coefficient: z = estimate / sqrt(var), two-sided normal p-value.
    Per equation: R^2 = 1 - RSS/TSS with the residual and total sums
    weighted by the fit's cell weights (all ones for the classical fit,
    so the plain formula is recovered).  The system measure is the GLS
    analogue 1 - e'(S^-1 kron I)e / y_c'(S^-1 kron I)y_c with y_c the
    per-equation mean-centered responses.
    """
    if fit.beta_cov is None:
        raise InferenceUnsupportedError(
            f"inference unsupported for {fit.method} (no coefficient covariance)"
        )
    n, m = system.n, system.m
    se = np.sqrt(np.diag(fit.beta_cov))
    z = np.divide(fit.beta, se, out=np.zeros_like(fit.beta), where=se > 0)
    p = 2.0 * stats.norm.sf(np.abs(z))

    rows = []
    parts = system.split_coefficients(fit.beta)
    offs = system.coef_offsets()
    for i, eq in enumerate(system.equations):
        for j, name in enumerate(eq.coef_names):
            idx = offs[i] + j
            rows.append(
                {
                    "equation": eq.response_name,
                    "coefficient": name,
                    "estimate": fit.beta[idx],
                    "std_error": se[idx],
                    "z": z[idx],
                    "p_value": p[idx],
                }
            )
    coef_table = pd.DataFrame(rows)

    eq_rows = []
    for i, eq in enumerate(system.equations):
        w = fit.cell_weights[:, i]
        wsum = w.sum()
        resid = eq.response - eq.design @ parts[i]
        rss = float(np.sum(w * resid * resid))
        ybar = float(np.sum(w * eq.response) / wsum)
        tss = float(np.sum(w * (eq.response - ybar) ** 2))
        r2 = 1.0 - rss / tss if tss > 0 else 1.0
        adj = 1.0 - (1.0 - r2) * (n - 1) / (n - eq.p) if n > eq.p else np.nan
        eq_rows.append(
            {
                "equation": eq.response_name,
                "r_squared": r2,
                "adj_r_squared": adj,
            }
        )
    eq_table = pd.DataFrame(eq_rows)

    omega = kronecker_omega(fit.sigma2, n)
    resid_stacked = fit.residuals.T.ravel()
    num = float(resid_stacked @ omega.apply_inverse(resid_stacked))
    resp = system.response_matrix()
    centered = resp - resp.mean(axis=0, keepdims=True)
    centered_stacked = centered.T.ravel()
    den = float(centered_stacked @ omega.apply_inverse(centered_stacked))
    system_r2 = 1.0 - num / den if den > 0 else 1.0

    return InferenceResult(
        coefficients=coef_table,
        equations=eq_table,
        system_r_squared=system_r2,
    )


@dataclass(frozen=True)
class FlaggedCells:
    """Cells whose weight fell below the flagging threshold."""

    mask: np.ndarray  # n x m booleans
    cell_fraction: float
    row_fraction: float


def flag_cells(fit: SurFit, threshold: float = 0.5) -> FlaggedCells:
    """Flag cells with weight below threshold; report cell/row fractions."""
    mask = fit.cell_weights < threshold
    n, m = mask.shape
    return FlaggedCells(
        mask=mask,
        cell_fraction=float(mask.sum() / (n * m)),
        row_fraction=float(np.any(mask, axis=1).mean()),
    )
