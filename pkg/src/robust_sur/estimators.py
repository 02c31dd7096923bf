"""System estimators: FGLS, cell-weighted robust GLS, and system S-estimation.

Three fitters share the SurFit record:

* ``fit_sure``     classical feasible GLS (OLS residual covariance, one
                   GLS pass, covariance refreshed from GLS residuals),
* ``fit_surerob``  per-equation MM fits, bisquare cell weights, a cellwise
                   robust covariance of the residual matrix, and a weighted
                   GLS step with the weights applied on both sides,
* ``fit_fastsur``  minimizes det(S) subject to an M-scale constraint on the
                   Mahalanobis lengths of the residual rows (subset search
                   plus alternating refinement).  No inference output.

The stacked normal equations are always assembled blockwise: the (i, j)
block is (Sigma^-1)_ij X_i' D_ij X_j with D_ij a diagonal reweighting, so
nothing of size mn ever materializes.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .cellwise import two_step_gs
from .exceptions import EstimationError, NotPositiveDefiniteError
from .loss import LossFamily, efficiency_family, m_scale, tune_for_breakdown
from .model import Equation, SurSystem, residuals
from .regression import RANK_RTOL, mm_regression, ols
from .seeding import seed_tuple

__all__ = ["SurFit", "fit_sure", "fit_surerob", "fit_fastsur"]


@dataclass(frozen=True)
class SurFit:
    """Result of a system fit.

    beta is the stacked coefficient vector (equation blocks in system
    order); sigma1 is the first-pass error covariance driving the GLS
    step and sigma2 the covariance recomputed from the final residuals.
    cell_weights holds one weight per (observation, equation) cell: all
    ones for sure, bisquare cell weights for surerob, and the row weight
    repeated across each row for fastsur.  beta_cov is None for fastsur
    (no inference is defined for it); scales holds the per-equation
    residual scales the weights refer to.
    """

    method: str
    beta: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    residuals: np.ndarray
    cell_weights: np.ndarray
    beta_cov: np.ndarray | None
    scales: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.sigma1.shape[0]


def _spd_inverse(sigma: np.ndarray, what: str) -> np.ndarray:
    """Inverse of a symmetric PD matrix, failing loudly with eigenvalues."""
    sigma = np.asarray(sigma, dtype=float)
    try:
        factor = linalg.cho_factor(sigma, lower=True)
    except linalg.LinAlgError as exc:
        evals = np.linalg.eigvalsh((sigma + sigma.T) / 2.0)
        raise NotPositiveDefiniteError(
            f"{what} is singular or not positive definite",
            eigenvalues=evals,
        ) from exc
    inv = linalg.cho_solve(factor, np.eye(sigma.shape[0]))
    return (inv + inv.T) / 2.0


def _gls_normal(
    system: SurSystem,
    sigma_inv: np.ndarray,
    pair_weight: Callable[[int, int], np.ndarray | None] | None = None,
):
    """Assemble A = X'(S^-1 kron I)X and rhs = X'(S^-1 kron I)y blockwise.

    pair_weight(i, j), when given, returns the diagonal of D_ij applied
    between X_i and X_j (and between X_i and y_j); it must be symmetric
    in (i, j) so the mirrored blocks stay transposes of each other.
    """
    m = system.m
    offs = system.coef_offsets()
    total = system.total_p
    a = np.zeros((total, total))
    rhs = np.zeros(total)
    xs = [eq.design for eq in system.equations]
    ys = [eq.response for eq in system.equations]

    for i in range(m):
        oi, pi = offs[i], system.p_list[i]
        for j in range(i, m):
            s = sigma_inv[i, j]
            oj, pj = offs[j], system.p_list[j]
            d = pair_weight(i, j) if pair_weight is not None else None
            xj = xs[j] if d is None else xs[j] * d[:, None]
            block = s * (xs[i].T @ xj)
            a[oi : oi + pi, oj : oj + pj] += block
            if i != j:
                a[oj : oj + pj, oi : oi + pi] += block.T
            yj = ys[j] if d is None else d * ys[j]
            rhs[oi : oi + pi] += s * (xs[i].T @ yj)
            if i != j:
                yi = ys[i] if d is None else d * ys[i]
                rhs[oj : oj + pj] += s * (xs[j].T @ yi)
    return a, rhs


def _solve_normal(a: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError as exc:
        evals = np.linalg.eigvalsh((a + a.T) / 2.0)
        raise NotPositiveDefiniteError(
            f"{what} normal matrix is singular or not positive definite",
            eigenvalues=evals,
        ) from exc
    return linalg.cho_solve(factor, rhs)


def _normal_inverse(a: np.ndarray, what: str) -> np.ndarray:
    inv = _solve_normal(a, np.eye(a.shape[0]), what)
    return (inv + inv.T) / 2.0


def fit_sure(system: SurSystem) -> SurFit:
    """Feasible GLS: OLS residual covariance, then one GLS pass.

    sigma1 has entries (1/n) e_i'e_j from the OLS residuals; beta solves
    X'(sigma1^-1 kron I)X beta = X'(sigma1^-1 kron I)y; sigma2 repeats
    the covariance on the GLS residuals and beta_cov is the inverse of
    the sigma2-weighted normal matrix.
    """
    t0 = time.perf_counter()
    n = system.n
    fits = [ols(eq) for eq in system.equations]
    beta0 = np.concatenate([f.beta for f in fits])
    resid0 = residuals(system, beta0)
    sigma1 = resid0.T @ resid0 / n

    sigma1_inv = _spd_inverse(sigma1, "first-pass residual covariance")
    a, rhs = _gls_normal(system, sigma1_inv)
    beta = _solve_normal(a, rhs, "GLS")

    resid = residuals(system, beta)
    sigma2 = resid.T @ resid / n
    sigma2_inv = _spd_inverse(sigma2, "second-pass residual covariance")
    a2, _ = _gls_normal(system, sigma2_inv)
    beta_cov = _normal_inverse(a2, "GLS")

    return SurFit(
        method="sure",
        beta=beta,
        sigma1=sigma1,
        sigma2=sigma2,
        residuals=resid,
        cell_weights=np.ones((n, system.m)),
        beta_cov=beta_cov,
        scales=np.sqrt(np.diag(sigma2)),
        diagnostics={"seconds": time.perf_counter() - t0},
    )


def _cell_pair_weight(weights: np.ndarray, mode: str):
    if mode == "squared":

        def pair(i: int, j: int) -> np.ndarray:
            return weights[:, i] * weights[:, j]

    elif mode == "sqrt":

        def pair(i: int, j: int) -> np.ndarray:
            return np.sqrt(weights[:, i] * weights[:, j])

    else:
        raise ValueError(
            f"cell_weighting must be 'squared' or 'sqrt', got {mode!r}"
        )
    return pair


def fit_surerob(
    system: SurSystem,
    family: LossFamily | None = None,
    *,
    n_subsets: int = 500,
    k_iter: int = 2,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int | tuple[int, ...] = 0,
    cell_weighting: str = "squared",
) -> SurFit:
    """Robust SUR via per-equation MM fits and cellwise covariance.

    Step 1 fits each equation by MM regression (50% breakdown S-stage,
    95%-efficiency M-step); step 2 turns the scaled residuals into
    bisquare cell weights w_ik = weight(e_ik / s_i); step 3 estimates
    sigma1 by the filtered generalized S-estimator on the residual
    matrix; step 4 solves the weighted GLS system with W on both sides,
    X'W(sigma1^-1 kron I)WX beta = X'W(sigma1^-1 kron I)Wy (the default;
    cell_weighting="sqrt" applies the classical single W); step 5
    recomputes the covariance on the new residuals the same way.

    Each equation's subset search draws from its own (seed, equation)
    stream, so fits are reproducible regardless of evaluation order.
    """
    t0 = time.perf_counter()
    n, m = system.n, system.m
    mm_family = family if family is not None else tune_for_breakdown(1, 0.5)
    m_family = efficiency_family()

    base = seed_tuple(seed)
    mm_fits = []
    not_converged = []
    for idx, eq in enumerate(system.equations):
        fit = mm_regression(
            eq,
            mm_family,
            m_family,
            n_subsets=n_subsets,
            k_iter=k_iter,
            tol=tol,
            max_iter=max_iter,
            seed=(*base, idx),
        )
        if not fit.converged:
            not_converged.append(idx)
        mm_fits.append(fit)
    if not_converged:
        warnings.warn(
            "MM regression did not converge for equation(s) "
            f"{not_converged}; using best iterates",
            RuntimeWarning,
            stacklevel=2,
        )

    beta1 = np.concatenate([f.beta for f in mm_fits])
    scales = np.array([f.scale for f in mm_fits])
    if np.any(scales <= 0.0):
        bad = [i for i, s in enumerate(scales) if s <= 0.0]
        raise EstimationError(
            f"equation(s) {bad} have zero residual scale; cell weights "
            "are undefined (exact fit or degenerate responses)"
        )
    resid1 = residuals(system, beta1)
    weights = m_family.weight(resid1 / scales[None, :])

    gs1 = two_step_gs(resid1)
    sigma1 = gs1.scatter
    sigma1_inv = _spd_inverse(sigma1, "robust residual covariance")

    pair = _cell_pair_weight(weights, cell_weighting)
    a, rhs = _gls_normal(system, sigma1_inv, pair)
    beta = _solve_normal(a, rhs, "weighted GLS")

    resid = residuals(system, beta)
    gs2 = two_step_gs(resid)
    sigma2 = gs2.scatter
    sigma2_inv = _spd_inverse(sigma2, "final robust residual covariance")
    a2, _ = _gls_normal(system, sigma2_inv, pair)
    beta_cov = _normal_inverse(a2, "weighted GLS")

    return SurFit(
        method="surerob",
        beta=beta,
        sigma1=sigma1,
        sigma2=sigma2,
        residuals=resid,
        cell_weights=weights,
        beta_cov=beta_cov,
        scales=scales,
        diagnostics={
            "seconds": time.perf_counter() - t0,
            "mm_iterations": [f.iterations for f in mm_fits],
            "mm_converged": [f.converged for f in mm_fits],
            "nonconverged_equations": not_converged,
            "gs_iterations": [gs1.iterations, gs2.iterations],
            "cell_weighting": cell_weighting,
        },
    )


def _row_distances(resid: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    low = linalg.cholesky(sigma, lower=True)
    sol = linalg.solve_triangular(low, resid.T, lower=True)
    return np.sqrt(np.sum(sol * sol, axis=0))


def _floor_pd(sigma: np.ndarray) -> np.ndarray:
    sigma = (sigma + sigma.T) / 2.0
    evals, evecs = np.linalg.eigh(sigma)
    floor = 1e-6 * max(np.trace(sigma), 1e-300) / sigma.shape[0]
    evals = np.maximum(evals, floor)
    return (evecs * evals) @ evecs.T


def _constrained_scatter(
    resid: np.ndarray, sigma: np.ndarray, family: LossFamily
):
    """One S-step: bisquare-reweighted scatter rescaled onto the constraint.

    Returns (scatter, distances under the input sigma, row weights). The
    output scatter satisfies (1/n) sum rho(d_k) = b exactly at its own
    distances, so det comparisons across iterations are like for like.
    """
    d = _row_distances(resid, sigma)
    s = m_scale(d, family)
    if s <= 0.0:
        raise EstimationError("residual rows collapse to an exact fit")
    w = family.weight(d / s)
    wsum = w.sum()
    if wsum <= 0.0:
        raise EstimationError("all residual rows received zero weight")
    v = (w[:, None] * resid).T @ resid / wsum
    v = _floor_pd(v)
    dv = _row_distances(resid, v)
    sv = m_scale(dv, family)
    if sv <= 0.0:
        raise EstimationError("residual rows collapse to an exact fit")
    return sv * sv * v, d, w


def _fastsur_b_step(
    system: SurSystem,
    sigma: np.ndarray,
    resid: np.ndarray,
    family: LossFamily,
) -> np.ndarray:
    """Row-weighted GLS step: weights from the current Mahalanobis lengths."""
    d = _row_distances(resid, sigma)
    s = m_scale(d, family)
    if s <= 0.0:
        raise EstimationError("residual rows collapse to an exact fit")
    w = family.weight(d / s)
    if w.sum() <= 0.0:
        raise EstimationError("all residual rows received zero weight")
    sigma_inv = _spd_inverse(sigma, "candidate scatter")

    def pair(i: int, j: int) -> np.ndarray:
        return w

    a, rhs = _gls_normal(system, sigma_inv, pair)
    return _solve_normal(a, rhs, "row-weighted GLS")


def _refine_candidate(
    system: SurSystem,
    beta: np.ndarray,
    sigma: np.ndarray,
    family: LossFamily,
    iters: int,
    rel_tol: float | None = None,
):
    """Alternating S-step / B-step refinement with monotone det descent.

    An iterate that would raise det(S) beyond roundoff slack is rejected
    and refinement stops at the previous pair, so the det path of every
    accepted candidate is non-increasing by construction.
    """
    resid = residuals(system, beta)
    sigma, _, _ = _constrained_scatter(resid, sigma, family)
    det = float(np.linalg.det(sigma))
    det_path = [det]
    converged = False
    done = 0
    for done in range(1, iters + 1):
        new_beta = _fastsur_b_step(system, sigma, resid, family)
        new_resid = residuals(system, new_beta)
        new_sigma, _, _ = _constrained_scatter(new_resid, sigma, family)
        new_det = float(np.linalg.det(new_sigma))
        if new_det > det * (1.0 + 1e-10) + 1e-300:
            done -= 1
            break
        beta, sigma, resid = new_beta, new_sigma, new_resid
        det_path.append(new_det)
        if rel_tol is not None and abs(new_det - det) <= rel_tol * max(det, 1e-300):
            det = new_det
            converged = True
            break
        det = new_det
    return beta, sigma, det, det_path, converged, done


def fit_fastsur(
    system: SurSystem,
    family: LossFamily | None = None,
    *,
    n_candidates: int = 500,
    k_iter: int = 2,
    best_of: int = 5,
    tol: float = 1e-8,
    max_iter: int = 100,
    seed: int | tuple[int, ...] = 0,
) -> SurFit:
    """System S-estimation: minimize det(S) under an M-scale constraint.

    Candidates come from random row subsets of size m + max(p_i): each
    subset yields per-equation OLS coefficients and the (PD-floored)
    sample covariance of its residual rows.  Every candidate gets k_iter
    alternating refinement steps (constrained scatter update, then
    row-weighted GLS); the best_of lowest-det survivors are refined to a
    relative det change below tol or max_iter iterations, and the
    minimizer is reported.  No coefficient covariance is produced.
    """
    t0 = time.perf_counter()
    n, m = system.n, system.m
    if family is None:
        family = tune_for_breakdown(m, 0.5)
    q = m + max(system.p_list)
    if n <= q:
        raise EstimationError(
            f"need more than m + max(p) = {q} observations, got {n}"
        )

    xs = [eq.design for eq in system.equations]
    resp = system.response_matrix()

    base = seed_tuple(seed)
    candidates = []
    for i in range(n_candidates):
        rng = np.random.default_rng(np.random.SeedSequence((*base, i)))
        for _attempt in range(100):
            rows = rng.choice(n, size=q, replace=False)
            betas = []
            ok = True
            for j, x in enumerate(xs):
                sub = x[rows]
                sv = np.linalg.svd(sub, compute_uv=False)
                if sv[-1] <= RANK_RTOL * max(sv[0], 1e-300):
                    ok = False
                    break
                b, *_ = np.linalg.lstsq(sub, resp[rows, j], rcond=None)
                betas.append(b)
            if not ok:
                continue
            beta = np.concatenate(betas)
            e = resp[rows] - np.column_stack(
                [x[rows] @ b for x, b in zip(xs, betas)]
            )
            e = e - e.mean(axis=0)
            sigma = _floor_pd(e.T @ e / q)
            candidates.append((beta, sigma))
            break
        else:
            continue
    if not candidates:
        raise EstimationError(
            "no non-degenerate subset candidates; data are rank deficient"
        )

    refined = []
    for beta0, sigma0 in candidates:
        try:
            beta, sigma, det, _, _, _ = _refine_candidate(
                system, beta0, sigma0, family, k_iter
            )
        except (EstimationError, NotPositiveDefiniteError, linalg.LinAlgError):
            continue
        refined.append((det, beta, sigma))
    if not refined:
        raise EstimationError("every candidate refinement degenerated")
    refined.sort(key=lambda t: t[0])

    best = None
    best_path = None
    best_converged = False
    best_iters = 0
    for det0, beta0, sigma0 in refined[:best_of]:
        try:
            beta, sigma, det, path, conv, iters = _refine_candidate(
                system, beta0, sigma0, family, max_iter, rel_tol=tol
            )
        except (EstimationError, NotPositiveDefiniteError, linalg.LinAlgError):
            continue
        if best is None or det < best[0]:
            best = (det, beta, sigma)
            best_path = path
            best_converged = conv
            best_iters = iters
    if best is None:
        raise EstimationError("all finalist refinements degenerated")

    det, beta, sigma = best
    resid = residuals(system, beta)
    d = _row_distances(resid, sigma)
    s = m_scale(d, family)
    w = family.weight(d / s) if s > 0 else (d == 0).astype(float)

    return SurFit(
        method="fastsur",
        beta=beta,
        sigma1=sigma,
        sigma2=sigma,
        residuals=resid,
        cell_weights=np.repeat(w[:, None], m, axis=1),
        beta_cov=None,
        scales=np.sqrt(np.diag(sigma)),
        diagnostics={
            "seconds": time.perf_counter() - t0,
            "det": det,
            "det_path": best_path,
            "converged": best_converged,
            "iterations": best_iters,
            "n_candidates": len(candidates),
        },
    )
