"""Shared test fixtures: synthetic SUR systems with known truth."""

import numpy as np

from robust_sur import Equation, SurSystem


def ar1(m, rho=0.5):
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def make_system(n, p, m, seed=0, sigma=None, identical_x=False, beta=None):
    """Gaussian SUR system with AR(1) error correlation by default."""
    rng = np.random.default_rng(seed)
    if sigma is None:
        sigma = ar1(m)
    if beta is None:
        beta = rng.normal(size=(m, p))
    chol = np.linalg.cholesky(sigma)
    errors = rng.normal(size=(n, m)) @ chol.T
    shared = rng.normal(size=(n, p))
    eqs = []
    for i in range(m):
        x = shared if identical_x else rng.normal(size=(n, p))
        y = x @ beta[i] + errors[:, i]
        eqs.append(Equation(response=y, design=x, response_name=f"y{i + 1}"))
    return SurSystem(equations=tuple(eqs)), beta
