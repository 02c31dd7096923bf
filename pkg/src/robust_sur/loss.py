"""Bounded loss functions, consistency constants, and M-scales.

Everything here is built around the Tukey bisquare family

    rho(u) = u^2/2 - u^4/(2 c0^2) + u^6/(6 c0^4)   for |u| <= c0,
           = c0^2/6                                  otherwise,

which is twice continuously differentiable, zero at zero, strictly
increasing on [0, c0] and constant beyond. The consistency constant
``b = E rho(||e||)`` with ``e ~ N_dim(0, I)`` calibrates M-scales and
S-scatter estimates so they are Fisher-consistent at the normal model.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .exceptions import ConvergenceError

__all__ = [
    "LossFamily",
    "bisquare_family",
    "tune_for_breakdown",
    "efficiency_family",
    "consistency_constant",
    "m_scale",
    "BISQUARE_C0_BDP50",
    "BISQUARE_C0_EFF95",
]

# Classical reference values: 50% breakdown and 95% normal efficiency
# tunings for the univariate bisquare. Recomputed constants are checked
# against these in the test suite; they are not used as inputs.
BISQUARE_C0_BDP50 = 1.5476
BISQUARE_C0_EFF95 = 4.685

# MAD-to-sigma factor for the normal (1/Phi^-1(0.75)).
_MADN = 0.6744897501960817


@dataclass(frozen=True)
class LossFamily:
    """A tuned bounded loss: tuning constant, consistency constant, kind."""

    c0: float
    b: float
    kind: str = "bisquare"

    @property
    def rho_inf(self) -> float:
        """Value of rho beyond the tuning constant, c0^2/6."""
        return self.c0 * self.c0 / 6.0

    @property
    def bdp(self) -> float:
        """Breakdown point implied by the calibration, b / rho(c0)."""
        return self.b / self.rho_inf

    # -- elementwise maps ------------------------------------------------

    def rho(self, u):
        """Bisquare rho, elementwise over ``u``."""
        u = np.asarray(u, dtype=float)
        t = np.minimum((u / self.c0) ** 2, 1.0)
        return self.rho_inf * (t * (3.0 + t * (t - 3.0)))

    def psi(self, u):
        """Derivative of rho: u (1 - (u/c0)^2)^2 inside, 0 beyond."""
        u = np.asarray(u, dtype=float)
        t = (u / self.c0) ** 2
        core = np.where(t < 1.0, (1.0 - t) ** 2, 0.0)
        return u * core

    def weight(self, u):
        """psi(u)/u with the continuous extension weight(0) = 1."""
        u = np.asarray(u, dtype=float)
        t = (u / self.c0) ** 2
        return np.where(t < 1.0, (1.0 - t) ** 2, 0.0)

    def psi_and_weight(self, u):
        """Return (psi(u), psi(u)/u) in one pass; weight(0) = 1."""
        u = np.asarray(u, dtype=float)
        w = self.weight(u)
        return u * w, w


def consistency_constant(c0: float, dim: int, rel_tol: float = 1e-8) -> float:
    """E rho(||e||) for e ~ N_dim(0, I), by adaptive quadrature.

    ||e|| follows a chi distribution with ``dim`` degrees of freedom, so

        b = int_0^c0 rho(r) f_chi(r) dr + rho(c0) (1 - F_chi(c0)).

    Raises ConvergenceError when the quadrature cannot certify ``rel_tol``.
    """
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    if c0 <= 0.0:
        raise ValueError("c0 must be positive")
    family = LossFamily(c0=c0, b=0.0)
    chi = stats.chi(dim)
    value, abserr = integrate.quad(
        lambda r: family.rho(r) * chi.pdf(r),
        0.0,
        c0,
        epsabs=1e-13,
        epsrel=rel_tol / 10.0,
        limit=200,
    )
    tail = family.rho_inf * chi.sf(c0)
    b = value + tail
    if abserr > rel_tol * max(b, 1e-30):
        raise ConvergenceError(
            f"consistency constant quadrature reached only abserr={abserr:.3e} "
            f"for c0={c0}, dim={dim}"
        )
    return b


@functools.lru_cache(maxsize=64)
def tune_for_breakdown(dim: int, bdp: float) -> LossFamily:
    """Solve b(c0, dim) = bdp * rho(c0) for c0 and return the tuned family.

    The returned family satisfies the defining equation to 1e-8. For
    dim=1, bdp=0.5 the solution is the classical 1.5476.
    """
    if not 0.0 < bdp < 1.0:
        raise ValueError("bdp must lie strictly between 0 and 1")

    def gap(c0: float) -> float:
        return consistency_constant(c0, dim) - bdp * c0 * c0 / 6.0

    lo = 0.05
    hi = 2.0
    # gap(c0) > 0 for small c0 (rho saturates almost surely) and < 0 for
    # large c0 (b is bounded by dim/2); expand until the sign flips.
    for _ in range(60):
        if gap(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("no upper bracket for tuning constant")
    c0 = optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=8.9e-16)
    b = consistency_constant(c0, dim)
    if abs(b - bdp * c0 * c0 / 6.0) > 1e-8:
        raise ConvergenceError("tuning constant did not satisfy its equation")
    return LossFamily(c0=float(c0), b=float(b))


def bisquare_family(c0: float, dim: int = 1) -> LossFamily:
    """Family with a given tuning constant, consistency constant at ``dim``."""
    return LossFamily(c0=float(c0), b=float(consistency_constant(c0, dim)))


@functools.lru_cache(maxsize=8)
def efficiency_family(c0: float = BISQUARE_C0_EFF95) -> LossFamily:
    """The high-efficiency family used by M-steps (95% at the default)."""
    return bisquare_family(c0, dim=1)


# -- M-scale ------------------------------------------------------------


def _mean_rho_ratio(v2, inv_s2_c02, axis=-1):
    """mean rho(v/s)/rho_inf given v^2 and 1/(s c0)^2, reduced over axis."""
    t = np.minimum(v2 * inv_s2_c02, 1.0)
    return np.mean(t * (3.0 + t * (t - 3.0)), axis=axis)


def m_scale_batch(
    values: np.ndarray,
    family: LossFamily,
    max_iter: int = 200,
    rtol: float = 1e-9,
) -> np.ndarray:
    """Row-wise M-scales of a 2-d array, one bisection shared by all rows.

    Each row r solves (1/n) sum_k rho(values[r, k] / s) = b by bracketed
    bisection on log s starting from median|values|/0.6745. Rows where more
    than (1 - bdp) n entries are exactly zero get scale 0.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("m_scale_batch expects a 2-d array")
    n = v.shape[1]
    if n == 0:
        raise ValueError("cannot compute a scale from zero values")
    v2 = v * v
    ratio = family.b / family.rho_inf  # = bdp

    nonzero_frac = np.count_nonzero(v2, axis=1) / n
    # No root exists once the nonzero mass cannot lift mean rho to b,
    # i.e. strictly more than (1 - bdp) n exact zeros.
    degenerate = nonzero_frac < ratio - 1e-15

    out = np.zeros(v.shape[0])
    active = ~degenerate
    if not np.any(active):
        return out

    v2a = v2[active]
    s0 = np.median(np.abs(v[active]), axis=1) / _MADN
    zero_start = s0 <= 0.0
    if np.any(zero_start):
        # More than half the entries are zero but a root still exists;
        # restart from the mean absolute value of the nonzero part.
        sums = np.sum(np.abs(v[active]), axis=1)
        counts = np.count_nonzero(v2a, axis=1)
        s0 = np.where(zero_start, sums / np.maximum(counts, 1), s0)

    c02 = family.c0 * family.c0

    def gap(s):
        return _mean_rho_ratio(v2a, 1.0 / (s * s * c02)[:, None]) - ratio

    lo = s0.copy()
    hi = s0.copy()
    g0 = gap(s0)
    need_hi = g0 > 0.0
    need_lo = ~need_hi
    # Bracket expansion, vectorized with masks.
    for _ in range(200):
        if not np.any(need_hi):
            break
        hi = np.where(need_hi, hi * 2.0, hi)
        g = _mean_rho_ratio(v2a, 1.0 / (hi * hi * c02)[:, None]) - ratio
        need_hi &= g > 0.0
    for _ in range(200):
        if not np.any(need_lo):
            break
        lo = np.where(need_lo, lo * 0.5, lo)
        g = _mean_rho_ratio(v2a, 1.0 / (lo * lo * c02)[:, None]) - ratio
        need_lo &= g < 0.0
    if np.any(need_hi):
        raise ConvergenceError("M-scale bracket expansion failed")
    if np.any(need_lo):
        # mean rho saturates strictly below b even as s -> 0: no positive
        # root (borderline zero-inflated input); fall back to the sentinel.
        lo = np.where(need_lo, 0.0, lo)
        hi = np.where(need_lo, 0.0, hi)

    for _ in range(max_iter):
        unconverged = hi - lo > rtol * lo
        if not np.any(unconverged):
            break
        mid = np.sqrt(lo * hi)
        g = _mean_rho_ratio(v2a, 1.0 / (mid * mid * c02)[:, None]) - ratio
        take_hi = g > 0.0
        lo = np.where(unconverged & take_hi, mid, lo)
        hi = np.where(unconverged & ~take_hi, mid, hi)

    out[active] = np.sqrt(lo * hi)
    return out


def m_scale(
    values,
    family: LossFamily,
    max_iter: int = 200,
    rtol: float = 1e-9,
) -> float:
    """M-scale of a vector: the s > 0 solving (1/n) sum rho(v_k/s) = b.

    Returns 0.0 when more than (1 - bdp) n of the values are exactly zero
    (including the all-zero input); this is a documented sentinel, not an
    error. The solution is scale equivariant: m_scale(lam v) = lam
    m_scale(v) up to the root-finder tolerance.
    """
    v = np.asarray(values, dtype=float).ravel()
    return float(m_scale_batch(v[None, :], family, max_iter=max_iter, rtol=rtol)[0])


def weighted_m_scale(
    values,
    multipliers,
    family: LossFamily,
    n: int | None = None,
    max_iter: int = 200,
    rtol: float = 1e-9,
) -> float:
    """Solve (1/n) sum_k a_k rho(v_k / s) = b for s >= 0.

    Generalization of ``m_scale`` used by the missing-data S-scatter, where
    each term carries a multiplier a_k in (0, 1] (and the rho argument has
    been pre-scaled by the caller). Returns 0.0 when no positive root
    exists because the weighted mass cannot reach b.
    """
    v = np.asarray(values, dtype=float).ravel()
    a = np.asarray(multipliers, dtype=float).ravel()
    if v.shape != a.shape:
        raise ValueError("values and multipliers must have matching shapes")
    if n is None:
        n = v.size
    if n <= 0:
        raise ValueError("n must be positive")
    ratio = family.b / family.rho_inf
    mass = np.sum(a[v != 0.0]) / n
    if mass < ratio - 1e-15:
        return 0.0

    v2 = v * v
    c02 = family.c0 * family.c0

    def gap(s: float) -> float:
        t = np.minimum(v2 / (s * s * c02), 1.0)
        return float(np.sum(a * (t * (3.0 + t * (t - 3.0))))) / n - ratio

    s0 = np.median(np.abs(v)) / _MADN
    if s0 <= 0.0:
        nz = np.abs(v[v != 0.0])
        s0 = float(np.mean(nz))
    lo = hi = s0
    for _ in range(200):
        if gap(hi) <= 0.0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("weighted M-scale bracket expansion failed")
    for _ in range(200):
        if gap(lo) >= 0.0:
            break
        lo *= 0.5
    else:
        # Saturated mass stays strictly below b: no positive root.
        return 0.0
    for _ in range(max_iter):
        if hi - lo <= rtol * lo:
            break
        mid = np.sqrt(lo * hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))
