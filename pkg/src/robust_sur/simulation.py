"""Monte Carlo scenario lab: correlation targets, draws, contamination.

A scenario fixes the system shape (n, p, m), the contamination design
(none, row-wise replacement, or cell-wise replacement), the grids of
contamination fraction epsilon and magnitude k, the correlation condition
number, and the replication count.  Every random object is drawn from a
stream named by integer counters under the master seed, so replication r
of a scenario is identical no matter where or when it runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DimensionError, SpecificationError
from .model import Equation, SurSystem
from .seeding import stream

__all__ = [
    "SimScenario",
    "SystemDraw",
    "random_correlation",
    "draw_system",
    "contaminate_thcm",
    "contaminate_icm",
    "contaminated_system",
]

CONTAMINATION_KINDS = ("none", "thcm", "icm")

# Raw Cauchy coefficient draws occasionally land so far out that squared
# errors overflow any comparison; clamp and count instead.
BETA_CLAMP = 100.0


@dataclass(frozen=True)
class SimScenario:
    """One Monte Carlo study: shape, contamination design, and grids."""

    n: int
    p: int
    m: int
    contamination: str = "none"
    epsilon_list: tuple[float, ...] = (0.0,)
    k_list: tuple[float, ...] = (0.0,)
    cn: float = 100.0
    reps: int = 50
    seed: int = 0
    methods: tuple[str, ...] = ("sure", "surerob", "fastsur")
    name: str = "scenario"

    def __post_init__(self):
        if self.n <= self.p:
            raise SpecificationError(f"need n > p, got n={self.n}, p={self.p}")
        if self.m < 1:
            raise SpecificationError("m must be at least 1")
        if self.contamination not in CONTAMINATION_KINDS:
            raise SpecificationError(
                f"contamination must be one of {CONTAMINATION_KINDS}, "
                f"got {self.contamination!r}"
            )
        eps = tuple(float(e) for e in self.epsilon_list)
        if any(e < 0.0 or e >= 0.5 for e in eps):
            raise SpecificationError("every epsilon must lie in [0, 0.5)")
        ks = tuple(float(k) for k in self.k_list)
        if any(k < 0.0 for k in ks):
            raise SpecificationError("every k must be nonnegative")
        if self.cn < 1.0:
            raise SpecificationError("condition number target must be >= 1")
        if self.reps < 1:
            raise SpecificationError("reps must be positive")
        bad = [m for m in self.methods if m not in ("sure", "surerob", "fastsur")]
        if bad:
            raise SpecificationError(f"unknown method(s): {bad}")
        object.__setattr__(self, "epsilon_list", eps)
        object.__setattr__(self, "k_list", ks)
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class SystemDraw:
    """A clean draw: the system, its generating truth, and the raw errors."""

    system: SurSystem
    beta: np.ndarray  # stacked truth, length m*p
    errors: np.ndarray  # n x m clean error rows
    sigma: np.ndarray  # the correlation used
    clamped: int  # count of clamped Cauchy coefficients


def random_correlation(m: int, cn: float, seed) -> np.ndarray:
    """Random correlation matrix with condition number cn (within 1%).

    A random orthogonal frame gets log-spaced eigenvalues between 1 and
    1/cn; the result is then alternately rescaled to unit diagonal and
    eigenvalue-reprojected to the target condition number (a power map on
    the spectrum leaves order intact) until both constraints hold, at
    most 50 sweeps.  The last operation is always the diagonal rescale,
    so the diagonal is exactly one.
    """
    if m < 2:
        raise DimensionError("need at least 2 dimensions for a correlation target")
    if cn <= 1.0:
        raise SpecificationError("condition number target must exceed 1")
    rng = stream(seed)
    a = rng.normal(size=(m, m))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))[None, :]
    lam = np.geomspace(1.0, 1.0 / cn, m)
    sigma = (q * lam[None, :]) @ q.T

    achieved = np.inf
    for _sweep in range(50):
        d = 1.0 / np.sqrt(np.diag(sigma))
        sigma = sigma * d[:, None] * d[None, :]
        np.fill_diagonal(sigma, 1.0)
        sigma = (sigma + sigma.T) / 2.0

        evals, evecs = np.linalg.eigh(sigma)
        achieved = evals[-1] / evals[0]
        if abs(achieved - cn) <= 0.01 * cn:
            return sigma
        # power map on the spectrum: ratio^alpha = cn with alpha chosen
        # in log space, preserving eigenvalue order
        alpha = np.log(cn) / np.log(achieved)
        evals = evals ** alpha
        sigma = (evecs * evals[None, :]) @ evecs.T
    raise ConvergenceError(
        f"correlation construction reached condition number {achieved:.3f} "
        f"after 50 sweeps (target {cn})"
    )


def draw_system(
    n: int,
    p: int,
    m: int,
    sigma: np.ndarray,
    seed,
    design_sampler=None,
) -> SystemDraw:
    """Draw one clean replication.

    Coefficients are i.i.d. standard Cauchy (clamped to |beta| <= 100,
    occurrences counted), each equation's design has i.i.d. N(0, 1)
    entries (override with design_sampler(rng, n, p)), error rows are
    N_m(0, sigma), and responses are assembled as y_i = X_i b_i + e_i.
    """
    rng = stream(seed)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (m, m):
        raise DimensionError(f"sigma must be {m} x {m}, got {sigma.shape}")

    raw = rng.standard_cauchy(size=(m, p))
    clamped = int(np.sum(np.abs(raw) > BETA_CLAMP))
    betas = np.clip(raw, -BETA_CLAMP, BETA_CLAMP)

    chol = np.linalg.cholesky(sigma)
    errors = rng.standard_normal(size=(n, m)) @ chol.T

    eqs = []
    for i in range(m):
        if design_sampler is None:
            x = rng.standard_normal(size=(n, p))
        else:
            x = np.asarray(design_sampler(rng, n, p), dtype=float)
        y = x @ betas[i] + errors[:, i]
        eqs.append(Equation(response=y, design=x, response_name=f"y{i + 1}"))
    system = SurSystem(equations=tuple(eqs))
    return SystemDraw(
        system=system,
        beta=betas.ravel(),
        errors=errors,
        sigma=sigma,
        clamped=clamped,
    )


def contaminate_thcm(
    errors: np.ndarray, sigma: np.ndarray, epsilon: float, k: float, seed
) -> np.ndarray:
    """Row-wise contamination: floor(epsilon*n) rows replaced by k*v.

    v is the eigenvector of sigma's smallest eigenvalue, normalized so
    v' sigma^-1 v = 1 (i.e. scaled by the square root of the eigenvalue):
    the least favorable direction for estimators that rely on the error
    correlation structure.
    """
    errors = np.asarray(errors, dtype=float)
    out = errors.copy()
    n = errors.shape[0]
    n_bad = int(np.floor(epsilon * n))
    if n_bad == 0:
        return out
    evals, evecs = np.linalg.eigh(np.asarray(sigma, dtype=float))
    v = np.sqrt(evals[0]) * evecs[:, 0]
    rng = stream(seed)
    rows = rng.choice(n, size=n_bad, replace=False)
    out[rows] = k * v[None, :]
    return out


def contaminate_icm(errors: np.ndarray, epsilon: float, k: float, seed) -> np.ndarray:
    """Cell-wise contamination: floor(epsilon*n*m) cells set to the value k.

    Cells are drawn uniformly without replacement over all n*m positions,
    so a fraction 1 - (1-epsilon)^m of rows carries at least one bad cell
    in expectation.
    """
    errors = np.asarray(errors, dtype=float)
    out = errors.copy()
    n, m = errors.shape
    n_bad = int(np.floor(epsilon * n * m))
    if n_bad == 0:
        return out
    rng = stream(seed)
    flat = rng.choice(n * m, size=n_bad, replace=False)
    out.ravel()[flat] = k
    return out


def contaminated_system(draw: SystemDraw, contamination: str, epsilon: float, k: float, seed) -> SurSystem:
    """Apply a contamination design to a draw and rebuild the responses.

    Responses are recomputed as y = X beta + contaminated errors, so the
    regression actually sees the planted outliers.  contamination="none"
    (or epsilon grids that floor to zero cells/rows) returns a system with
    the clean responses.
    """
    if contamination == "none" or epsilon == 0.0:
        return draw.system
    if contamination == "thcm":
        bad = contaminate_thcm(draw.errors, draw.sigma, epsilon, k, seed)
    elif contamination == "icm":
        bad = contaminate_icm(draw.errors, epsilon, k, seed)
    else:
        raise SpecificationError(f"unknown contamination kind {contamination!r}")
    parts = np.reshape(draw.beta, (draw.system.m, -1))
    responses = np.column_stack(
        [eq.design @ parts[i] for i, eq in enumerate(draw.system.equations)]
    ) + bad
    return draw.system.with_responses(responses)
