"""Configuration files for the command line: simulation grids and analyses.

Two formats are accepted and distinguished by extension: a sectioned
key-value file (INI syntax) for anything else, and JSON when the file
ends in ``.json``.  Simulation configs may list several sample sizes,
correlations, and missingness modes; the grid expands into one
Monte Carlo cell per combination.  The environment variable
``MINBO_SEED`` overrides the configured seed.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ParseError
from .simulation import (
    DEFAULT_ALPHA,
    DEFAULT_ESTIMATORS,
    DEFAULT_ETA,
    ESTIMATOR_LAYOUTS,
    FULL,
    INFORMATIVE,
    MCAR,
    SimulationConfig,
)

SEED_ENV_VAR = "MINBO_SEED"


def _split_list(raw: str) -> list[str]:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def _parse_floats(raw: str, context: str) -> list[float]:
    try:
        return [float(tok) for tok in _split_list(raw)]
    except ValueError as exc:
        raise ParseError(f"{context}: expected comma-separated reals, got {raw!r}") from exc


def _parse_bool(raw: str, context: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"{context}: expected a boolean, got {raw!r}")


def _parse_omega(raw: str) -> list[list[float]]:
    rows = [row for row in raw.split(";") if row.strip()]
    return [_parse_floats(row, "scheme.omega") for row in rows]


def _format_omega(rows) -> str:
    return " ; ".join(", ".join(repr(float(v)) for v in row) for row in rows)


def _sections_from_path(path: str | Path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: top level must be an object")
        out: dict[str, dict[str, str]] = {}
        for section, body in data.items():
            if not isinstance(body, dict):
                raise ParseError(f"{path}: section {section!r} must be an object")
            out[section] = {
                key: _json_value_to_text(value) for key, value in body.items()
            }
        return out
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _json_value_to_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return _format_omega(value)
        return ", ".join(_json_value_to_text(v) for v in value)
    raise ParseError(f"unsupported JSON value {value!r}")


@dataclass(frozen=True)
class SimulationGrid:
    """Expanded simulate request: one SimulationConfig per (n, rho, mode) cell."""

    sample_sizes: tuple[int, ...]
    rhos: tuple[float, ...]
    modes: tuple[str, ...]
    eta: tuple[float, float, float]
    alpha: tuple[float, ...]
    misspecified: bool
    reps: int
    seed: int
    estimators: tuple[str, ...]
    confidence: float
    threads: int = 0
    out_dir: str = "results"

    def cells(self) -> list[SimulationConfig]:
        out = []
        for n in self.sample_sizes:
            for rho in self.rhos:
                for mode in self.modes:
                    out.append(SimulationConfig(
                        n=n, rho=rho, missingness=mode, eta=self.eta,
                        alpha=self.alpha, misspecified=self.misspecified,
                        reps=self.reps, seed=self.seed,
                        estimators=self.estimators,
                        confidence=self.confidence,
                    ))
        return out


def load_simulation_grid(path: str | Path) -> SimulationGrid:
    sections = _sections_from_path(path)
    if "simulation" not in sections:
        raise ParseError(f"{path}: missing [simulation] section")
    sim = dict(sections["simulation"])
    options = dict(sections.get("options", {}))
    output = dict(sections.get("output", {}))

    def pop(mapping, key, default=None):
        return mapping.pop(key, default)

    try:
        sample_sizes = tuple(int(float(v)) for v in _split_list(pop(sim, "n", "")))
        rhos = tuple(float(v) for v in _split_list(pop(sim, "rho", "")))
    except ValueError as exc:
        raise ParseError(f"{path}: bad n/rho ({exc})") from exc
    if not sample_sizes or not rhos:
        raise ParseError(f"{path}: [simulation] must set n and rho")
    modes = tuple(v.lower() for v in _split_list(pop(sim, "missingness", FULL)))
    for mode in modes:
        if mode not in (FULL, MCAR, INFORMATIVE):
            raise ParseError(f"{path}: unknown missingness mode {mode!r}")
    eta_raw = pop(sim, "eta", None)
    eta = tuple(_parse_floats(eta_raw, "eta")) if eta_raw else DEFAULT_ETA
    if len(eta) != 3:
        raise ParseError(f"{path}: eta must have three entries")
    alpha_raw = pop(sim, "alpha", None)
    alpha = tuple(_parse_floats(alpha_raw, "alpha")) if alpha_raw else DEFAULT_ALPHA
    misspecified = _parse_bool(pop(sim, "misspecified", "false"), "misspecified")
    try:
        reps = int(float(pop(sim, "reps", "1000")))
        seed = int(float(pop(sim, "seed", "0")))
    except ValueError as exc:
        raise ParseError(f"{path}: bad reps/seed ({exc})") from exc
    estimators_raw = pop(sim, "estimators", None)
    estimators = (tuple(_split_list(estimators_raw))
                  if estimators_raw else DEFAULT_ESTIMATORS)
    unknown = [e for e in estimators if e not in ESTIMATOR_LAYOUTS]
    if unknown:
        raise ParseError(f"{path}: unknown estimators {unknown}")
    if sim:
        raise ParseError(f"{path}: unknown [simulation] keys {sorted(sim)}")

    confidence = float(pop(options, "confidence", "0.95"))
    threads = int(float(pop(options, "threads", "0")))
    out_dir = pop(output, "dir", "results")

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ParseError(f"{SEED_ENV_VAR} must be an integer") from exc
    return SimulationGrid(
        sample_sizes=sample_sizes, rhos=rhos, modes=modes, eta=eta, alpha=alpha,
        misspecified=misspecified, reps=reps, seed=seed, estimators=estimators,
        confidence=confidence, threads=threads, out_dir=out_dir,
    )


def serialize_simulation_grid(grid: SimulationGrid) -> str:
    """Render a grid back to INI text; parsing the result recovers the grid."""
    lines = ["[simulation]"]
    lines.append("n = " + ", ".join(str(v) for v in grid.sample_sizes))
    lines.append("rho = " + ", ".join(repr(v) for v in grid.rhos))
    lines.append("missingness = " + ", ".join(grid.modes))
    lines.append("eta = " + ", ".join(repr(v) for v in grid.eta))
    lines.append("alpha = " + ", ".join(repr(v) for v in grid.alpha))
    lines.append(f"misspecified = {'true' if grid.misspecified else 'false'}")
    lines.append(f"reps = {grid.reps}")
    lines.append(f"seed = {grid.seed}")
    lines.append("estimators = " + ", ".join(grid.estimators))
    lines.append("")
    lines.append("[options]")
    lines.append(f"confidence = {grid.confidence!r}")
    lines.append(f"threads = {grid.threads}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"dir = {grid.out_dir}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SecondarySpecConfig:
    """One secondary file: where it lives and how its working model looks."""

    file: str
    kind: str  # "longitudinal" | "cross_sectional"
    outcome: str
    covariates: tuple[str, ...]
    id_column: str = "id"
    time_column: str = "time"  # longitudinal only
    redundant: tuple[str, ...] = ()  # cross-sectional only
    link: str = ""  # defaults by kind
    basis: str = "default"
    variance_mode: str = "preliminary_residual"
    label: str = ""


@dataclass(frozen=True)
class SchemeConfig:
    kind: str  # averaging | aggregating | custom
    omega: tuple[tuple[float, ...], ...] = ()
    weight_mode: str = "iib"


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything cmd_estimate needs: files, working models, scheme, output."""

    main_file: str
    main_outcome: str
    main_covariates: tuple[str, ...]
    main_id: str
    secondaries: tuple[SecondarySpecConfig, ...]
    scheme: SchemeConfig
    output_format: str = "json"
    output_path: str = ""
    confidence: float = 0.95
    threads: int = 0
    seed: int = 0
    base_dir: str = "."

    def resolve(self, name: str) -> Path:
        path = Path(name)
        return path if path.is_absolute() else Path(self.base_dir) / path


def load_analysis_config(path: str | Path) -> AnalysisConfig:
    sections = _sections_from_path(path)
    if "main" not in sections:
        raise ParseError(f"{path}: missing [main] section")
    main = dict(sections["main"])
    try:
        main_file = main.pop("file")
        main_outcome = main.pop("outcome")
        covariates = tuple(_split_list(main.pop("covariates")))
    except KeyError as exc:
        raise ParseError(f"{path}: [main] missing key {exc}") from exc
    main_id = main.pop("id", "id")
    if main:
        raise ParseError(f"{path}: unknown [main] keys {sorted(main)}")

    secondaries = []
    index = 1
    while f"secondary{index}" in sections:
        body = dict(sections[f"secondary{index}"])
        try:
            kind = body.pop("kind").strip().lower()
            file_name = body.pop("file")
            outcome = body.pop("outcome")
            covs = tuple(_split_list(body.pop("covariates")))
        except KeyError as exc:
            raise ParseError(
                f"{path}: [secondary{index}] missing key {exc}"
            ) from exc
        if kind not in ("longitudinal", "cross_sectional"):
            raise ParseError(f"{path}: unknown secondary kind {kind!r}")
        redundant = tuple(_split_list(body.pop("redundant", "")))
        if kind == "cross_sectional" and not redundant:
            raise ParseError(
                f"{path}: [secondary{index}] needs redundant covariates"
            )
        secondaries.append(SecondarySpecConfig(
            file=file_name,
            kind=kind,
            outcome=outcome,
            covariates=covs,
            id_column=body.pop("id", main_id),
            time_column=body.pop("time", "time"),
            redundant=redundant,
            link=body.pop("link", "identity" if kind == "longitudinal" else "logit"),
            basis=body.pop("basis", "default"),
            variance_mode=body.pop("variance_mode", "preliminary_residual"),
            label=body.pop("label", f"secondary{index}"),
        ))
        if body:
            raise ParseError(
                f"{path}: unknown [secondary{index}] keys {sorted(body)}"
            )
        index += 1
    if not secondaries:
        raise ParseError(f"{path}: need at least one [secondary1] section")

    scheme_body = dict(sections.get("scheme", {"kind": "averaging"}))
    kind = scheme_body.pop("kind", "averaging").strip().lower()
    omega_raw = scheme_body.pop("omega", "")
    omega = tuple(tuple(row) for row in _parse_omega(omega_raw)) if omega_raw else ()
    weight_mode = scheme_body.pop("weight_mode", "iib").strip().lower()
    if scheme_body:
        raise ParseError(f"{path}: unknown [scheme] keys {sorted(scheme_body)}")

    output = dict(sections.get("output", {}))
    options = dict(sections.get("options", {}))
    seed = int(float(options.pop("seed", "0")))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        seed = int(env_seed)
    return AnalysisConfig(
        main_file=main_file,
        main_outcome=main_outcome,
        main_covariates=covariates,
        main_id=main_id,
        secondaries=tuple(secondaries),
        scheme=SchemeConfig(kind=kind, omega=omega, weight_mode=weight_mode),
        output_format=output.pop("format", "json").strip().lower(),
        output_path=output.pop("path", ""),
        confidence=float(options.pop("confidence", "0.95")),
        threads=int(float(options.pop("threads", "0"))),
        seed=seed,
        base_dir=str(Path(path).parent),
    )


def serialize_analysis_config(config: AnalysisConfig) -> str:
    lines = ["[main]"]
    lines.append(f"file = {config.main_file}")
    lines.append(f"id = {config.main_id}")
    lines.append(f"outcome = {config.main_outcome}")
    lines.append("covariates = " + ", ".join(config.main_covariates))
    for idx, sec in enumerate(config.secondaries, start=1):
        lines.append("")
        lines.append(f"[secondary{idx}]")
        lines.append(f"file = {sec.file}")
        lines.append(f"kind = {sec.kind}")
        lines.append(f"id = {sec.id_column}")
        if sec.kind == "longitudinal":
            lines.append(f"time = {sec.time_column}")
        lines.append(f"outcome = {sec.outcome}")
        lines.append("covariates = " + ", ".join(sec.covariates))
        if sec.redundant:
            lines.append("redundant = " + ", ".join(sec.redundant))
        lines.append(f"link = {sec.link}")
        lines.append(f"basis = {sec.basis}")
        lines.append(f"variance_mode = {sec.variance_mode}")
        lines.append(f"label = {sec.label}")
    lines.append("")
    lines.append("[scheme]")
    lines.append(f"kind = {config.scheme.kind}")
    if config.scheme.omega:
        lines.append("omega = " + _format_omega(config.scheme.omega))
    lines.append(f"weight_mode = {config.scheme.weight_mode}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"format = {config.output_format}")
    if config.output_path:
        lines.append(f"path = {config.output_path}")
    lines.append("")
    lines.append("[options]")
    lines.append(f"confidence = {config.confidence!r}")
    lines.append(f"threads = {config.threads}")
    lines.append(f"seed = {config.seed}")
    return "\n".join(lines) + "\n"
