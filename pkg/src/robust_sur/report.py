"""Figure rendering for fits, simulation studies, and benchmarks.

Figures are written as PNG files next to the delimited output so a run
directory is self-contained: study curves (MSE and divergence against the
outlier magnitude, one line per method, one pair of panels per epsilon),
the sorted cell-weight profile of a fit, and the benchmark bar chart.
All rendering uses the Agg backend; nothing ever opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .estimators import SurFit

__all__ = ["simulation_figures", "fit_figures", "bench_figure"]

_METHOD_STYLE = {
    "sure": {"color": "#888888", "marker": "o", "linestyle": "--"},
    "surerob": {"color": "#1f6fb2", "marker": "s", "linestyle": "-"},
    "fastsur": {"color": "#c44e52", "marker": "^", "linestyle": "-."},
}


def _style(method: str) -> dict:
    return _METHOD_STYLE.get(method, {"marker": "o"})


def _eps_tag(eps: float) -> str:
    return f"{eps:g}".replace(".", "p")


def simulation_figures(summary: pd.DataFrame, out_dir) -> list[Path]:
    """MSE-vs-k and delta2-vs-k panels, one pair per epsilon level."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for eps, cell in summary.groupby("epsilon"):
        for metric, label in [("mse", "MSE"), ("delta2", "divergence of sigma2")]:
            finite = cell[metric].replace([np.inf, -np.inf], np.nan).dropna()
            if finite.empty:
                continue
            fig, ax = plt.subplots(figsize=(6.0, 4.2))
            for method, curve in cell.groupby("method"):
                curve = curve.sort_values("k")
                ax.plot(
                    curve["k"], curve[metric], label=method, **_style(method)
                )
            if len(finite) and finite.max() > 0 and (
                finite.max() / max(finite[finite > 0].min(), 1e-300) > 1e3
            ):
                ax.set_yscale("log")
            ax.set_xlabel("outlier magnitude k")
            ax.set_ylabel(label)
            ax.set_title(f"epsilon = {eps:g}")
            ax.legend()
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            path = out_dir / f"{metric}_vs_k_eps{_eps_tag(eps)}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            paths.append(path)
    return paths


def fit_figures(fit: SurFit, equation_names, out_dir) -> list[Path]:
    """Sorted cell-weight profile: one line per equation.

    Cells pulled toward zero weight stand out as the early part of each
    curve; a clean fit shows flat lines at one.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n, m = fit.cell_weights.shape
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    frac = (np.arange(n) + 1) / n
    for i in range(m):
        ax.plot(frac, np.sort(fit.cell_weights[:, i]), label=str(equation_names[i]))
    ax.set_xlabel("cell quantile")
    ax.set_ylabel("weight")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"sorted cell weights ({fit.method})")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "cell_weights.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def bench_figure(timing: pd.DataFrame, out_dir) -> list[Path]:
    """Grouped bar chart of mean seconds per method and contamination."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = list(dict.fromkeys(timing["method"]))
    conts = list(dict.fromkeys(timing["contamination"]))
    width = 0.8 / max(len(conts), 1)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    xs = np.arange(len(methods))
    for ci, cont in enumerate(conts):
        sub = timing[timing["contamination"] == cont].set_index("method")
        vals = [sub.loc[meth, "mean_s"] if meth in sub.index else np.nan for meth in methods]
        ax.bar(xs + ci * width, vals, width=width, label=cont)
    ax.set_xticks(xs + width * (len(conts) - 1) / 2)
    ax.set_xticklabels(methods)
    ax.set_ylabel("mean seconds per fit")
    if np.nanmax(timing["mean_s"].to_numpy()) > 0:
        ax.set_yscale("log")
    ax.legend(title="contamination")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    path = out_dir / "timing.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
