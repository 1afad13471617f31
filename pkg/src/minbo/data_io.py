"""CSV ingestion and report serialization for the command line.

The main file is wide (one row per subject); longitudinal secondary
files are long format (id, time, outcome, covariates) and are pivoted
into balanced blocks, sorting by (id, time) internally; cross-sectional
secondary files are wide.  A subject absent from a secondary file gets
observation indicator zero with zero placeholder blocks; a subject with
an incomplete block is an error.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path

import numpy as np

from .config import AnalysisConfig, SecondarySpecConfig
from .exceptions import ParseError, UnbalancedLongitudinal, UnknownSubject
from .model_core import (
    CrossSectionalDataset,
    LongitudinalDataset,
    MainDataset,
    SecondaryDataset,
    WorkingModelSpec,
    cross_sectional_spec,
    default_basis,
    longitudinal_spec,
)


def _read_rows(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise ParseError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        return list(reader)


def _need(row: dict[str, str], column: str, path: Path, line: int) -> str:
    if column not in row or row[column] is None:
        raise ParseError(f"{path}:{line}: missing column {column!r}")
    return row[column]


def _to_float(text: str, column: str, path: Path, line: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(
            f"{path}:{line}: column {column!r} is not a number: {text!r}"
        ) from exc


def load_main(config: AnalysisConfig) -> tuple[MainDataset, list[str]]:
    path = config.resolve(config.main_file)
    rows = _read_rows(path)
    ids: list[str] = []
    y = []
    covs = []
    for line, row in enumerate(rows, start=2):
        subject = _need(row, config.main_id, path, line)
        if subject in ids:
            raise ParseError(f"{path}:{line}: duplicate subject id {subject!r}")
        ids.append(subject)
        y.append(_to_float(_need(row, config.main_outcome, path, line),
                           config.main_outcome, path, line))
        covs.append([
            _to_float(_need(row, c, path, line), c, path, line)
            for c in config.main_covariates
        ])
    if not ids:
        raise ParseError(f"{path}: no data rows")
    X = np.column_stack([np.ones(len(ids)), np.asarray(covs)])
    return MainDataset(y=np.asarray(y), X=X), ids


def _load_longitudinal(sec: SecondarySpecConfig, config: AnalysisConfig,
                       ids: list[str]) -> tuple[LongitudinalDataset, WorkingModelSpec]:
    path = config.resolve(sec.file)
    rows = _read_rows(path)
    id_set = set(ids)
    per_subject: dict[str, list[tuple[float, float, list[float]]]] = {}
    for line, row in enumerate(rows, start=2):
        subject = _need(row, sec.id_column, path, line)
        if subject not in id_set:
            raise UnknownSubject(
                f"{path}:{line}: subject {subject!r} absent from the main file"
            )
        time = _to_float(_need(row, sec.time_column, path, line),
                         sec.time_column, path, line)
        outcome = _to_float(_need(row, sec.outcome, path, line),
                            sec.outcome, path, line)
        covs = [_to_float(_need(row, c, path, line), c, path, line)
                for c in sec.covariates]
        per_subject.setdefault(subject, []).append((time, outcome, covs))
    if not per_subject:
        raise ParseError(f"{path}: no data rows")
    counts = Counter(len(v) for v in per_subject.values())
    m = max(k for k, c in counts.items() if c == max(counts.values()))
    for subject in ids:
        if subject in per_subject and len(per_subject[subject]) != m:
            raise UnbalancedLongitudinal(
                f"subject {subject!r} has {len(per_subject[subject])} rows, "
                f"expected {m}"
            )
    n = len(ids)
    r = 1 + len(sec.covariates)
    Y = np.zeros((n, m))
    X = np.zeros((n, m, r))
    R = np.zeros(n)
    for idx, subject in enumerate(ids):
        if subject not in per_subject:
            continue
        block = sorted(per_subject[subject], key=lambda item: item[0])
        R[idx] = 1.0
        for t, (_, outcome, covs) in enumerate(block):
            Y[idx, t] = outcome
            X[idx, t, 0] = 1.0
            X[idx, t, 1:] = covs
    if sec.basis != "default":
        raise ParseError(f"unknown basis set {sec.basis!r}; only 'default' ships")
    if sec.link != "identity":
        raise ParseError("longitudinal working models require the identity link")
    if sec.variance_mode not in ("unit", "preliminary_residual"):
        raise ParseError(f"unknown variance mode {sec.variance_mode!r}")
    spec = longitudinal_spec(
        theta_dim=r, m=m, basis=default_basis(m), variance_mode=sec.variance_mode
    )
    return LongitudinalDataset(Y=Y, X=X, R=R), spec


def _load_cross_sectional(sec: SecondarySpecConfig, config: AnalysisConfig,
                          ids: list[str]) -> tuple[CrossSectionalDataset, WorkingModelSpec]:
    path = config.resolve(sec.file)
    rows = _read_rows(path)
    id_set = set(ids)
    if sec.link != "logit":
        raise ParseError("cross-sectional working models require the logit link")
    seen: dict[str, tuple[float, list[float], list[float]]] = {}
    for line, row in enumerate(rows, start=2):
        subject = _need(row, sec.id_column, path, line)
        if subject not in id_set:
            raise UnknownSubject(
                f"{path}:{line}: subject {subject!r} absent from the main file"
            )
        if subject in seen:
            raise ParseError(f"{path}:{line}: duplicate subject id {subject!r}")
        outcome = _to_float(_need(row, sec.outcome, path, line),
                            sec.outcome, path, line)
        xs = [_to_float(_need(row, c, path, line), c, path, line)
              for c in sec.covariates]
        zs = [_to_float(_need(row, c, path, line), c, path, line)
              for c in sec.redundant]
        seen[subject] = (outcome, xs, zs)
    n = len(ids)
    r = 1 + len(sec.covariates)
    q = len(sec.redundant)
    y = np.zeros(n)
    x = np.zeros((n, r))
    z = np.zeros((n, q))
    R = np.zeros(n)
    for idx, subject in enumerate(ids):
        if subject not in seen:
            continue
        outcome, xs, zs = seen[subject]
        R[idx] = 1.0
        y[idx] = outcome
        x[idx, 0] = 1.0
        x[idx, 1:] = xs
        z[idx] = zs
    return CrossSectionalDataset(y=y, x=x, z=z, R=R), cross_sectional_spec(r)


def load_datasets(config: AnalysisConfig):
    """Load the main file and every secondary file named in the config.

    Returns ``(main, secondaries, specs, subject_ids)`` with subjects in
    main-file order throughout.
    """
    main, ids = load_main(config)
    secondaries: list[SecondaryDataset] = []
    specs: list[WorkingModelSpec] = []
    for sec in config.secondaries:
        if sec.kind == "longitudinal":
            data, spec = _load_longitudinal(sec, config, ids)
        else:
            data, spec = _load_cross_sectional(sec, config, ids)
        secondaries.append(data)
        specs.append(spec)
    return main, secondaries, specs, ids


def _fmt(value) -> str:
    """Shortest round-trip decimal representation of a float."""
    return repr(float(value))


def write_report(rows: list[dict], out_path: Path, fmt: str) -> None:
    """Write an estimate report; JSON and CSV carry identical numbers."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        text = json.dumps({"rows": rows}, indent=2, sort_keys=False)
        out_path.write_text(text + "\n", encoding="utf-8")
        return
    if fmt != "csv":
        raise ParseError(f"unknown output format {fmt!r}")
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            value = row[key]
            cells.append(_fmt(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def report_rows_from_json(path: Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))["rows"]


def summary_table(summary) -> tuple[list[str], list[list[str]]]:
    """Rows of one Monte Carlo summary using the x100 reporting convention.

    Bias, Monte Carlo spread, and mean standard error are multiplied by
    100; values carry four significant digits.  The spread and
    efficiency columns are dropped when only one replicate ran.
    """
    have_spread = summary.mcsd is not None
    header = ["Estimator", "Coefficient", "Bias"]
    if have_spread:
        header.append("MCSD")
    header.append("ASE")
    header.append("CP")
    if have_spread:
        header.append("ERE")
    rows = []
    for e_idx, name in enumerate(summary.estimators):
        for c_idx, coef in enumerate(summary.coefficients):
            row = [name, coef, f"{100.0 * summary.bias[e_idx, c_idx]:.4g}"]
            if have_spread:
                row.append(f"{100.0 * summary.mcsd[e_idx, c_idx]:.4g}")
            row.append(f"{100.0 * summary.mean_ase[e_idx, c_idx]:.4g}")
            row.append(f"{summary.cp[e_idx, c_idx]:.4g}")
            if have_spread:
                row.append(f"{summary.ere[e_idx, c_idx]:.4g}")
            rows.append(row)
    return header, rows


def write_summary_csv(summary, out_path: Path) -> None:
    header, rows = summary_table(summary)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(row) for row in rows]
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_summary_csv(path: Path) -> dict[tuple[str, str], dict[str, float]]:
    """Parse a summary CSV back into {(estimator, coefficient): columns}."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = text[0].split(",")
    out: dict[tuple[str, str], dict[str, float]] = {}
    for line in text[1:]:
        cells = line.split(",")
        record = dict(zip(header, cells))
        key = (record.pop("Estimator"), record.pop("Coefficient"))
        out[key] = {k: float(v) for k, v in record.items()}
    return out
