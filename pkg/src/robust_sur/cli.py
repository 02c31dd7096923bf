"""Command line front end: fit tables, simulation grids, timing benches.

Three subcommands share one contract: outputs land in --out as CSV files
plus rendered PNG figures (suppress with --no-figures), and a
manifest.json naming every produced file is written last as the
completion marker.  Exit codes: 0 success, 2 invalid input or usage,
3 estimator/numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .estimators import fit_fastsur, fit_sure, fit_surerob
from .exceptions import RobustSurError, SpecificationError
from .metrics import system_inference
from .model import system_from_frame
from .simulation import SimScenario
from .study import bench_timing, simulate_scenario, summarize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: Path) -> dict:
    """Parse a TOML or JSON config file by suffix (TOML by default)."""
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(raw.decode("utf-8"))
    try:
        import tomllib  # py >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


def _write_manifest(
    out_dir: Path, command: str, config_hash: str, seed, started: str, outputs
):
    manifest = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _utc_now(),
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _default_threads() -> int:
    env = os.environ.get("RSUR_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _matrix_frame(matrix: np.ndarray, names) -> pd.DataFrame:
    return pd.DataFrame(matrix, columns=list(names))


def cmd_fit(args) -> int:
    started = _utc_now()
    data_path = Path(args.data)
    model_path = Path(args.model)
    if args.inference and args.method == "fastsur":
        print("error: inference unsupported for fastsur", file=sys.stderr)
        return EXIT_USAGE
    for path, what in [(data_path, "data file"), (model_path, "model spec")]:
        if not path.is_file():
            print(f"error: {what} not found: {path}", file=sys.stderr)
            return EXIT_USAGE

    spec = _load_config(model_path)
    frame = pd.read_csv(data_path)
    system = system_from_frame(frame, spec)

    if args.method == "sure":
        fit = fit_sure(system)
    elif args.method == "surerob":
        fit = fit_surerob(system, seed=args.seed)
    else:
        fit = fit_fastsur(system, seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    eq_names = [eq.response_name for eq in system.equations]
    coef_rows = []
    parts = system.split_coefficients(fit.beta)
    for eq, part in zip(system.equations, parts):
        for name, value in zip(eq.coef_names, part):
            coef_rows.append(
                {
                    "equation": eq.response_name,
                    "coefficient": name,
                    "estimate": value,
                }
            )
    path = out_dir / "coefficients.csv"
    pd.DataFrame(coef_rows).to_csv(path, index=False)
    outputs.append(path)

    for fname, matrix in [("sigma1.csv", fit.sigma1), ("sigma2.csv", fit.sigma2)]:
        path = out_dir / fname
        _matrix_frame(matrix, eq_names).to_csv(path, index=False)
        outputs.append(path)

    path = out_dir / "weights.csv"
    _matrix_frame(fit.cell_weights, eq_names).to_csv(path, index=False)
    outputs.append(path)

    if fit.method != "fastsur":
        inference = system_inference(fit, system)
        path = out_dir / "inference.csv"
        inference.coefficients.to_csv(path, index=False)
        outputs.append(path)

        quality = inference.equations.copy()
        quality.loc[len(quality)] = {
            "equation": "(system)",
            "r_squared": inference.system_r_squared,
            "adj_r_squared": np.nan,
        }
        path = out_dir / "fit_quality.csv"
        quality.to_csv(path, index=False)
        outputs.append(path)

    if not args.no_figures:
        from .report import fit_figures

        outputs.extend(fit_figures(fit, eq_names, out_dir))

    outputs.append(
        _write_manifest(
            out_dir,
            "fit",
            _sha256(model_path),
            args.seed,
            started,
            outputs,
        )
    )
    return EXIT_OK


def _scenario_from_config(config: dict, name: str, seed_override) -> SimScenario:
    known = {
        "n",
        "p",
        "m",
        "contamination",
        "epsilon_list",
        "k_list",
        "cn",
        "reps",
        "seed",
        "methods",
        "name",
    }
    unknown = sorted(set(config) - known)
    if unknown:
        raise SpecificationError(f"unknown config key(s): {unknown}")
    missing = sorted({"n", "p", "m"} - set(config))
    if missing:
        raise SpecificationError(f"config missing required key(s): {missing}")
    fields = dict(config)
    fields.setdefault("name", name)
    if seed_override is not None:
        fields["seed"] = seed_override
    if "epsilon_list" in fields:
        fields["epsilon_list"] = tuple(fields["epsilon_list"])
    if "k_list" in fields:
        fields["k_list"] = tuple(fields["k_list"])
    if "methods" in fields:
        fields["methods"] = tuple(fields["methods"])
    return SimScenario(**fields)


def cmd_simulate(args) -> int:
    started = _utc_now()
    config_path = Path(args.config)
    if not config_path.is_file():
        print(f"error: config not found: {config_path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = _load_config(config_path)
        scenario = _scenario_from_config(
            config, config_path.stem, args.seed
        )
    except (ValueError, TypeError, SpecificationError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    results = simulate_scenario(scenario, threads=args.threads)
    summary = summarize(results)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    path = out_dir / "results.csv"
    results.to_csv(path, index=False)
    outputs.append(path)
    path = out_dir / "summary.csv"
    summary.to_csv(path, index=False)
    outputs.append(path)

    failures = int((results["error"] != "").sum())
    print(
        f"{scenario.name}: {scenario.reps} replications, "
        f"{len(results)} rows, {failures} failures"
    )

    if not args.no_figures:
        from .report import simulation_figures

        outputs.extend(simulation_figures(summary, out_dir))

    outputs.append(
        _write_manifest(
            out_dir, "simulate", _sha256(config_path), scenario.seed, started, outputs
        )
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    started = _utc_now()
    config_path = Path(args.config)
    if not config_path.is_file():
        print(f"error: config not found: {config_path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = _load_config(config_path)
        known = {
            "n", "p", "m", "cn", "reps", "seed", "methods",
            "contaminations", "epsilon", "k",
        }
        unknown = sorted(set(config) - known)
        if unknown:
            raise SpecificationError(f"unknown config key(s): {unknown}")
        missing = sorted({"n", "p", "m"} - set(config))
        if missing:
            raise SpecificationError(f"config missing required key(s): {missing}")
        kwargs = {
            "methods": tuple(config.get("methods", ("sure", "surerob", "fastsur"))),
            "contaminations": tuple(config.get("contaminations", ("none",))),
            "epsilon": float(config.get("epsilon", 0.10)),
            "k": float(config.get("k", 50.0)),
            "cn": float(config.get("cn", 100.0)),
            "reps": int(config.get("reps", 5)),
            "seed": int(config.get("seed", 0)),
        }
        if args.seed is not None:
            kwargs["seed"] = args.seed
        bad = [c for c in kwargs["contaminations"] if c not in ("none", "thcm", "icm")]
        if bad:
            raise SpecificationError(f"unknown contamination kind(s): {bad}")
    except (ValueError, TypeError, SpecificationError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    timing = bench_timing(
        int(config["n"]), int(config["p"]), int(config["m"]), **kwargs
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    path = out_dir / "timing.csv"
    timing.to_csv(path, index=False)
    outputs.append(path)
    print(timing.to_string(index=False))

    if not args.no_figures:
        from .report import bench_figure

        outputs.extend(bench_figure(timing, out_dir))

    outputs.append(
        _write_manifest(
            out_dir, "bench", _sha256(config_path), kwargs["seed"], started, outputs
        )
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-sur",
        description="Classical and robust estimation for SUR systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a system to a CSV data set")
    fit.add_argument("--data", required=True, help="CSV file with named columns")
    fit.add_argument(
        "--model", required=True, help="model spec (TOML or JSON): equations list"
    )
    fit.add_argument(
        "--method",
        default="sure",
        choices=["sure", "surerob", "fastsur"],
        help="estimator to use",
    )
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--seed", type=int, default=0, help="estimator seed")
    fit.add_argument(
        "--inference",
        action="store_true",
        help="require an inference table (invalid with fastsur)",
    )
    fit.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering"
    )
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--config", required=True, help="scenario config (TOML/JSON)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="worker threads (default: RSUR_THREADS or 1)",
    )
    sim.add_argument(
        "--seed", type=int, default=None, help="override the config seed"
    )
    sim.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering"
    )
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", help="time the estimators")
    bench.add_argument("--config", required=True, help="bench config (TOML/JSON)")
    bench.add_argument("--out", required=True, help="output directory")
    bench.add_argument(
        "--seed", type=int, default=None, help="override the config seed"
    )
    bench.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering"
    )
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RobustSurError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
