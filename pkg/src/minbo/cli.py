"""Command-line front end: simulate, estimate, validate.

``minbo simulate <config> [--threads N] [--out DIR]`` runs a Monte
Carlo grid and writes one summary CSV per cell plus a JSON manifest.
``minbo estimate <config> [--out FILE]`` fits CSV datasets and writes an
estimate report.  ``minbo validate <config>`` dry-runs the schema and
data checks.  All randomness is seeded from the config (or the
``MINBO_SEED`` environment variable), so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import config as config_mod
from . import data_io
from .empirical_likelihood import fit_el
from .estimator import fit_unweighted, fit_weighted
from .exceptions import MinboError
from .schemes import build_scheme, integrate_scores, resolve_iib
from .simulation import default_theta_init, monte_carlo
from .variance import scheme_variance, summarize, variance_components


def _threads(requested: int | None, config_value: int) -> int:
    if requested is not None and requested > 0:
        return requested
    if config_value > 0:
        return config_value
    return os.cpu_count() or 1


def _cell_stem(cell) -> str:
    stem = f"summary_n{cell.n}_rho{cell.rho:g}_{cell.missingness}"
    if cell.misspecified:
        stem += "_mis"
    return stem


def _print_table(header, rows) -> None:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def cmd_simulate(config_path: str, threads: int | None = None,
                 out_dir: str | None = None) -> int:
    """Run every cell of a simulation grid; returns a process exit code."""
    grid = config_mod.load_simulation_grid(config_path)
    n_workers = _threads(threads, grid.threads)
    out = Path(out_dir) if out_dir else Path(grid.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest: dict = {
        "seed": grid.seed,
        "reps": grid.reps,
        "estimators": list(grid.estimators),
        "threads": n_workers,
        "cells": [],
    }
    cells = grid.cells()
    executor = None
    try:
        if n_workers > 1:
            executor = ProcessPoolExecutor(max_workers=n_workers)
        for cell in cells:
            summary = monte_carlo(cell, threads=1, executor=executor)
            csv_name = _cell_stem(cell) + ".csv"
            data_io.write_summary_csv(summary, out / csv_name)
            header, rows = data_io.summary_table(summary)
            print(f"\ncell n={cell.n} rho={cell.rho:g} "
                  f"missingness={cell.missingness} "
                  f"misspecified={cell.misspecified}")
            _print_table(header, rows)
            manifest["cells"].append({
                "n": cell.n,
                "rho": cell.rho,
                "missingness": cell.missingness,
                "misspecified": cell.misspecified,
                "csv": csv_name,
                "reps_used": summary.reps_used,
                "n_failed": summary.n_failed,
                "failure_counts": dict(summary.failure_counts),
            })
    finally:
        if executor is not None:
            executor.shutdown()
    manifest["wall_time_s"] = time.time() - started
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return 0


def _wald_p(estimate: np.ndarray, ase: np.ndarray) -> np.ndarray:
    return 2.0 * ndtr(-np.abs(estimate / ase))


def estimate_rows(main, secondaries, specs, scheme_cfg, covariate_labels,
                  confidence: float = 0.95) -> list[dict]:
    """Run the full borrowing pipeline on in-memory data; return report rows.

    Rows carry the point estimate, standard error, estimated relative
    efficiency against the plain maximum likelihood fit, odds ratio,
    interval limits on both scales, and two-sided Wald p-values.
    """
    mle = fit_unweighted(main)
    fits = [fit_el(data, spec, default_theta_init(data, spec))
            for data, spec in zip(secondaries, specs)]
    base = variance_components(main, mle.beta_hat, fits, secondaries)
    vtilde = base.vtilde
    scheme = build_scheme(
        scheme_cfg.kind if scheme_cfg.kind != "omnibus" else "custom",
        len(fits),
        omega=np.asarray(scheme_cfg.omega) if scheme_cfg.omega else None,
        weight_mode=scheme_cfg.weight_mode,
    )
    scheme = resolve_iib(scheme, base.gamma, base.lambdas, base.s_mats, vtilde)
    score = integrate_scores(scheme, [fit.weights for fit in fits])
    solution = fit_weighted(main, score, beta0=mle.beta_hat)
    comps = variance_components(main, solution.beta_hat, fits)
    report = summarize(
        solution.beta_hat, scheme_variance(comps, scheme), main.n,
        reference_V=vtilde, level=confidence, scheme_label=scheme_cfg.kind,
    )
    mle_report = summarize(
        mle.beta_hat, vtilde, main.n, reference_V=vtilde,
        level=confidence, scheme_label="mle",
    )
    labels = ("intercept",) + tuple(covariate_labels)
    mle_p = _wald_p(mle_report.beta_hat, mle_report.ase)
    rows: list[dict] = []
    for rep in (mle_report, report):
        p_vals = _wald_p(rep.beta_hat, rep.ase)
        for j, label in enumerate(labels):
            rows.append({
                "estimator": rep.scheme_label,
                "coefficient": label,
                "estimate": float(rep.beta_hat[j]),
                "ase": float(rep.ase[j]),
                "ere": float(rep.ere[j]),
                "or": float(np.exp(rep.beta_hat[j])),
                "ll": float(rep.ci_lower[j]),
                "ul": float(rep.ci_upper[j]),
                "or_ll": float(np.exp(rep.ci_lower[j])),
                "or_ul": float(np.exp(rep.ci_upper[j])),
                "p_value": float(p_vals[j]),
                "p_value_mle": float(mle_p[j]),
            })
    return rows


def run_estimate_pipeline(analysis: config_mod.AnalysisConfig) -> list[dict]:
    """Load the configured CSV files and fit the MLE plus the scheme."""
    main, secondaries, specs, _ = data_io.load_datasets(analysis)
    return estimate_rows(main, secondaries, specs, analysis.scheme,
                         analysis.main_covariates, analysis.confidence)


def cmd_estimate(config_path: str, out_path: str | None = None) -> int:
    """Fit the configured analysis and write the report; exit code 0 on success."""
    analysis = config_mod.load_analysis_config(config_path)
    rows = run_estimate_pipeline(analysis)
    fmt = analysis.output_format
    target = Path(out_path) if out_path else (
        Path(analysis.output_path) if analysis.output_path
        else Path(f"estimate_report.{fmt}")
    )
    if out_path:
        suffix = target.suffix.lower().lstrip(".")
        if suffix in ("json", "csv"):
            fmt = suffix
    data_io.write_report(rows, target, fmt)
    header = list(rows[0].keys())
    printable = [[
        f"{v:.4g}" if isinstance(v, float) else str(v) for v in row.values()
    ] for row in rows]
    _print_table(header, printable)
    print(f"\nreport written to {target}")
    return 0


def cmd_validate(config_path: str) -> int:
    """Schema and data dry-run; prints what would be fitted."""
    sections = config_mod._sections_from_path(config_path)
    if "simulation" in sections:
        grid = config_mod.load_simulation_grid(config_path)
        cells = grid.cells()
        print(f"simulation config ok: {len(cells)} cells, "
              f"reps={grid.reps}, seed={grid.seed}, "
              f"estimators={', '.join(grid.estimators)}")
        return 0
    analysis = config_mod.load_analysis_config(config_path)
    main, secondaries, specs, ids = data_io.load_datasets(analysis)
    print(f"analysis config ok: n={main.n}, p={main.p}, "
          f"{len(secondaries)} secondary datasets")
    for idx, (sec, data) in enumerate(zip(analysis.secondaries, secondaries), 1):
        observed = int(np.sum(data.R))
        print(f"  secondary{idx} ({sec.kind}): observed {observed}/{main.n}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="minbo",
        description="Information borrowing from secondary datasets "
                    "for main-model estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo grid")
    p_sim.add_argument("config")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--out", default=None)

    p_est = sub.add_parser("estimate", help="fit CSV datasets")
    p_est.add_argument("config")
    p_est.add_argument("--out", default=None)

    p_val = sub.add_parser("validate", help="dry-run schema and data checks")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, threads=args.threads,
                                out_dir=args.out)
        if args.command == "estimate":
            return cmd_estimate(args.config, out_path=args.out)
        return cmd_validate(args.config)
    except MinboError as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
