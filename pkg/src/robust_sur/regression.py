"""Per-equation estimators: OLS and MM regression with an S first stage.

The MM estimator follows the usual two-stage construction. A resampling
S-estimator (breakdown 0.5) provides a starting point and a residual
scale; an IRLS M-step with a high-efficiency bisquare then improves the
coefficients while the scale stays frozen. Candidate search is vectorized
across subsets: one batched M-scale bisection serves every candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, EstimationError, RankError
from .loss import LossFamily, efficiency_family, m_scale, m_scale_batch, tune_for_breakdown
from .model import Equation
from .seeding import seed_tuple

__all__ = ["RegressionFit", "ols", "s_initial", "mm_regression"]

# Relative singular-value cutoff for rank decisions, applied everywhere a
# design matrix is factorized.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class RegressionFit:
    """Result of a single-equation fit."""

    beta: np.ndarray
    scale: float
    weights: np.ndarray
    converged: bool
    iterations: int


def _dependent_columns(x: np.ndarray) -> tuple[int, ...]:
    """Indices of columns that a pivoted QR marks as linearly dependent."""
    from scipy import linalg

    r, piv = linalg.qr(x, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return tuple(range(x.shape[1]))
    rank = int(np.sum(diag > RANK_RTOL * diag[0]))
    return tuple(sorted(int(c) for c in piv[rank:]))


def ols(eq: Equation) -> RegressionFit:
    """Least squares fit with an explicit rank check.

    The reported scale is sqrt(mean squared residual) (the 1/n
    convention used by the system covariance estimates downstream).
    """
    x, y = eq.design, eq.response
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size else 0
    if rank < x.shape[1]:
        cols = _dependent_columns(x)
        names = ", ".join(eq.coef_names[c] for c in cols)
        raise RankError(
            f"equation '{eq.response_name}': design is rank deficient "
            f"(dependent columns: {names})",
            columns=cols,
        )
    beta = vt.T @ ((u.T @ y) / s)
    resid = y - x @ beta
    return RegressionFit(
        beta=beta,
        scale=float(np.sqrt(np.mean(resid**2))),
        weights=np.ones_like(y),
        converged=True,
        iterations=0,
    )


def _batched_wls(x, y, weights):
    """Solve (X' W_c X) b_c = X' W_c y for every weight row in one call."""
    xtwx = np.einsum("np,cn,nq->cpq", x, weights, x, optimize=True)
    xtwy = np.einsum("np,cn->cp", x, weights * y[None, :], optimize=True)
    return np.linalg.solve(xtwx, xtwy[..., None])[..., 0]


def s_initial(
    eq: Equation,
    family: LossFamily | None = None,
    n_subsets: int = 500,
    k_iter: int = 2,
    seed: int | tuple[int, ...] = 0,
):
    """Subset-resampling candidates for the S-estimator.

    Draws ``n_subsets`` exact-fit candidates from random p-point subsets
    (each subset's RNG stream is derived from (seed, subset index), so
    results are reproducible regardless of evaluation order), improves
    each with ``k_iter`` IRLS steps, and returns (betas, scales) sorted by
    the residual M-scale ascending, ties broken by smaller coefficient
    norm and then candidate index.
    """
    if family is None:
        family = tune_for_breakdown(1, 0.5)
    x, y = eq.design, eq.response
    n, p = x.shape
    if n_subsets < 1:
        raise ValueError("n_subsets must be positive")
    if n <= p:
        raise EstimationError(
            f"equation '{eq.response_name}': need more than p={p} observations"
        )

    base = seed_tuple(seed)
    xs = np.empty((n_subsets, p, p))
    ys = np.empty((n_subsets, p))
    for i in range(n_subsets):
        rng = np.random.default_rng(np.random.SeedSequence((*base, i)))
        for _attempt in range(100):
            idx = rng.choice(n, size=p, replace=False)
            sub = x[idx]
            sv = np.linalg.svd(sub, compute_uv=False)
            if sv[-1] > RANK_RTOL * max(sv[0], 1e-300):
                xs[i] = sub
                ys[i] = y[idx]
                break
        else:
            raise EstimationError(
                f"equation '{eq.response_name}': could not draw a nondegenerate "
                f"subset for candidate {i}"
            )

    betas = np.linalg.solve(xs, ys[..., None])[..., 0]

    for _ in range(k_iter):
        resid = y[None, :] - betas @ x.T
        scales = m_scale_batch(resid, family)
        live = scales > 0.0
        if not np.any(live):
            break
        w = family.weight(resid[live] / scales[live, None])
        try:
            betas[live] = _batched_wls(x, y, w)
        except np.linalg.LinAlgError:
            # a handful of candidates can zero out too many weights;
            # refresh the ones that remain solvable and keep the rest
            live_idx = np.flatnonzero(live)
            for row, ci in enumerate(live_idx):
                try:
                    betas[ci] = _batched_wls(x, y, w[row : row + 1])[0]
                except np.linalg.LinAlgError:
                    pass

    resid = y[None, :] - betas @ x.T
    scales = m_scale_batch(resid, family)
    norms = np.linalg.norm(betas, axis=1)
    order = np.lexsort((np.arange(n_subsets), norms, scales))
    return betas[order], scales[order]


def _irls(x, y, beta, family, scale, tol, max_iter, update_scale):
    """IRLS loop shared by the S refinement and the M step.

    With ``update_scale`` the residual M-scale is recomputed every
    iteration (S stage) and descent is monitored on the scale; otherwise
    the scale stays frozen (M stage) and descent is monitored on
    sum rho(r / scale).
    """
    resid = y - x @ beta
    if update_scale:
        scale = m_scale(resid, family)
        if scale == 0.0:
            return beta, scale, True, 0
        merit = scale
    else:
        if scale <= 0.0:
            return beta, scale, True, 0
        merit = float(np.sum(family.rho(resid / scale)))

    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        w = family.weight(resid / scale)
        try:
            xtw = x.T * w
            new_beta = np.linalg.solve(xtw @ x, xtw @ y)
        except np.linalg.LinAlgError:
            break
        new_resid = y - x @ new_beta
        if update_scale:
            new_scale = m_scale(new_resid, family)
            new_merit = new_scale
        else:
            new_scale = scale
            new_merit = float(np.sum(family.rho(new_resid / scale)))
        # IRLS descent; an uphill step means we are at numerical noise
        # level, so keep the previous iterate and stop.
        assert new_merit <= merit * (1.0 + 1e-9) + 1e-12, "IRLS merit increased"
        if new_merit > merit:
            converged = True
            break
        step = np.max(np.abs(new_beta - beta)) / (1.0 + np.max(np.abs(new_beta)))
        beta, resid, scale, merit = new_beta, new_resid, new_scale, new_merit
        if update_scale and scale == 0.0:
            converged = True
            break
        if step < tol:
            converged = True
            break
    return beta, scale, converged, iterations


def mm_regression(
    eq: Equation,
    family: LossFamily | None = None,
    m_family: LossFamily | None = None,
    n_subsets: int = 500,
    k_iter: int = 2,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int | tuple[int, ...] = 0,
) -> RegressionFit:
    """MM regression: S-estimate (breakdown 0.5) then a frozen-scale M-step.

    Returns the fitted coefficients, the S-stage scale, and the final
    M-step weights (in [0, 1], one per observation). The M-step never
    leaves the coefficients with a larger rho objective than its starting
    point, so the breakdown point of the S stage is inherited.
    """
    if family is None:
        family = tune_for_breakdown(1, 0.5)
    if m_family is None:
        m_family = efficiency_family()
    x, y = eq.design, eq.response

    betas, scales = s_initial(eq, family, n_subsets=n_subsets, k_iter=k_iter, seed=seed)
    beta = betas[0].copy()

    beta, scale, s_converged, s_iters = _irls(
        x, y, beta, family, None, tol, max_iter, update_scale=True
    )
    if scale == 0.0:
        # Exact fit on a majority of points: the coefficients already
        # interpolate; report indicator weights for the fitted points.
        resid = y - x @ beta
        return RegressionFit(
            beta=beta,
            scale=0.0,
            weights=(resid == 0.0).astype(float),
            converged=True,
            iterations=s_iters,
        )

    beta, _, m_converged, m_iters = _irls(
        x, y, beta, m_family, scale, tol, max_iter, update_scale=False
    )
    resid = y - x @ beta
    return RegressionFit(
        beta=beta,
        scale=float(scale),
        weights=m_family.weight(resid / scale),
        converged=bool(s_converged and m_converged),
        iterations=s_iters + m_iters,
    )
