"""Monte Carlo driver: replication loops, long-format results, summaries.

One replication draws a correlation matrix, coefficients, designs, and
errors from streams named (seed, rep, counter); every (epsilon, k) cell
contaminates the same clean draw and every method fits the same
contaminated system, so comparisons are paired.  Replications are
embarrassingly parallel and the output is sorted canonically, which makes
result tables identical for any thread count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from .estimators import fit_fastsur, fit_sure, fit_surerob
from .exceptions import RobustSurError
from .metrics import kl_divergence, mse
from .simulation import (
    SimScenario,
    contaminated_system,
    draw_system,
    random_correlation,
)

__all__ = [
    "load_table",
    "run_replication",
    "simulate_scenario",
    "summarize",
    "bench_timing",
]

RESULT_COLUMNS = [
    "scenario",
    "method",
    "epsilon",
    "k",
    "rep",
    "mse_contrib",
    "delta1",
    "delta2",
    "seconds",
    "error",
]


def _fit_method(method: str, system, seed):
    if method == "sure":
        return fit_sure(system)
    if method == "surerob":
        return fit_surerob(system, seed=seed)
    if method == "fastsur":
        return fit_fastsur(system, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def run_replication(scenario: SimScenario, rep: int) -> list[dict]:
    """All result rows for one replication (every cell, every method)."""
    base = (scenario.seed, rep)
    if scenario.m >= 2:
        sigma = random_correlation(scenario.m, scenario.cn, seed=(*base, 0))
    else:
        sigma = np.eye(1)
    draw = draw_system(
        scenario.n, scenario.p, scenario.m, sigma, seed=(*base, 1)
    )

    rows = []
    for ei, eps in enumerate(scenario.epsilon_list):
        for ki, k in enumerate(scenario.k_list):
            system = contaminated_system(
                draw, scenario.contamination, eps, k, seed=(*base, 2, ei, ki)
            )
            for method in scenario.methods:
                row = {
                    "scenario": scenario.name,
                    "method": method,
                    "epsilon": eps,
                    "k": k,
                    "rep": rep,
                    "mse_contrib": np.nan,
                    "delta1": np.nan,
                    "delta2": np.nan,
                    "seconds": np.nan,
                    "error": "",
                }
                t0 = time.perf_counter()
                try:
                    fit = _fit_method(method, system, seed=(*base, 3))
                    row["seconds"] = time.perf_counter() - t0
                    row["mse_contrib"] = mse([fit.beta], draw.beta)
                    row["delta1"] = kl_divergence(fit.sigma1, sigma)
                    row["delta2"] = kl_divergence(fit.sigma2, sigma)
                except (RobustSurError, np.linalg.LinAlgError) as exc:
                    row["seconds"] = time.perf_counter() - t0
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
    return rows


def simulate_scenario(scenario: SimScenario, threads: int = 1) -> pd.DataFrame:
    """Long-format results for every (method, epsilon, k, rep) cell.

    Failed replications keep their row with NA metrics and the error
    message; they are excluded from summaries but counted there.
    """
    threads = max(1, int(threads))
    if threads == 1:
        chunks = [run_replication(scenario, r) for r in range(scenario.reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(
                pool.map(lambda r: run_replication(scenario, r), range(scenario.reps))
            )
    rows = [row for chunk in chunks for row in chunk]
    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    frame = frame.sort_values(
        ["scenario", "method", "epsilon", "k", "rep"], kind="mergesort"
    ).reset_index(drop=True)
    return frame


def load_table(path) -> pd.DataFrame:
    """Read back a results/summary/timing CSV exactly as written.

    Floats are parsed in round-trip mode (pandas' default parser drops the
    seventeenth significant digit) and empty error fields stay "", so
    load_table(path).to_csv(index=False) reproduces the file byte for byte.
    """
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Per-cell study table: MSE, divergences, mean time, failure count."""
    def agg(group: pd.DataFrame) -> pd.Series:
        ok = group[group["error"] == ""]
        return pd.Series(
            {
                "mse": ok["mse_contrib"].mean(),
                "delta1": ok["delta1"].mean(),
                "delta2": ok["delta2"].mean(),
                "mean_seconds": ok["seconds"].mean(),
                "reps": len(group),
                "failures": int((group["error"] != "").sum()),
            }
        )

    grouped = (
        results.groupby(["scenario", "method", "epsilon", "k"], sort=True)
        .apply(agg, include_groups=False)
        .reset_index()
    )
    grouped["reps"] = grouped["reps"].astype(int)
    grouped["failures"] = grouped["failures"].astype(int)
    return grouped


def bench_timing(
    n: int,
    p: int,
    m: int,
    *,
    methods=("sure", "surerob", "fastsur"),
    contaminations=("none",),
    epsilon: float = 0.10,
    k: float = 50.0,
    cn: float = 100.0,
    reps: int = 5,
    seed: int = 0,
) -> pd.DataFrame:
    """Wall-time table: one row per (method, contamination).

    Fits are paired: every method times against the same draws.  Reported
    are the mean and median of per-fit seconds over reps.
    """
    rows = []
    times = {(meth, cont): [] for meth in methods for cont in contaminations}
    for rep in range(reps):
        base = (seed, rep)
        sigma = random_correlation(m, cn, seed=(*base, 0)) if m >= 2 else np.eye(1)
        draw = draw_system(n, p, m, sigma, seed=(*base, 1))
        for ci, cont in enumerate(contaminations):
            eps = 0.0 if cont == "none" else epsilon
            system = contaminated_system(draw, cont, eps, k, seed=(*base, 2, ci, 0))
            for meth in methods:
                t0 = time.perf_counter()
                try:
                    _fit_method(meth, system, seed=(*base, 3))
                except (RobustSurError, np.linalg.LinAlgError):
                    continue
                times[(meth, cont)].append(time.perf_counter() - t0)
    for meth in methods:
        for cont in contaminations:
            ts = times[(meth, cont)]
            rows.append(
                {
                    "method": meth,
                    "contamination": cont,
                    "epsilon": 0.0 if cont == "none" else epsilon,
                    "k": k,
                    "mean_s": float(np.mean(ts)) if ts else np.nan,
                    "median_s": float(np.median(ts)) if ts else np.nan,
                    "reps": len(ts),
                }
            )
    return pd.DataFrame(rows)
