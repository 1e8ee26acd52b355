"""Command-line interface: fit CSV data, run simulation grids, diagnose spectra.

Every command is deterministic given its arguments, input files and seed.
Numbers are written with 15 significant digits; exit code 2 flags malformed
input or configuration, 3 flags an all-targets-degenerate fit.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, ddl, simgen, spectral

logger = logging.getLogger(__name__)

_FIT_KEYS = {
    "input", "response", "targets", "rho", "rho_j", "alpha", "transform",
    "tuning", "out_dir", "seed", "workers",
}
_SIM_KEYS = {"ddl", "cells"}
_SIM_DDL_KEYS = {"rho", "rho_j", "alpha", "transform", "tuning", "center", "solver_tol"}
_CELL_KEYS = {"scenario", "methods", "reps", "axis", "axis_value"}

ESTIMATES_COLUMNS = (
    "target", "beta_hat", "std_err", "ci_low", "ci_high", "p_value",
    "sigma_e2_hat", "lambda", "lambda_j", "flags",
)


class CliError(Exception):
    """Invalid input or configuration; maps to exit code 2."""


def _fmt(value: float) -> str:
    return f"{float(value):.15g}"


def parse_transform(text: str) -> tuple[str, int | None]:
    if text == "trim":
        return "trim", None
    if text == "identity":
        return "identity", None
    if text.startswith("pca:"):
        try:
            rank = int(text.split(":", 1)[1])
        except ValueError as exc:
            raise CliError(f"bad pca rank in transform {text!r}") from exc
        return "pca", rank
    raise CliError(f"unknown transform {text!r} (expected trim, pca:K or identity)")


def parse_tuning(text: str) -> ddl.CvTuning | ddl.TheoryTuning:
    if text == "cv":
        return ddl.CvTuning()
    if text.startswith("theory:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise CliError(f"tuning {text!r} must look like theory:A:sigmaE:sigmaJ")
        try:
            a, sigma_e, sigma_j = (float(v) for v in parts[1:])
        except ValueError as exc:
            raise CliError(f"bad numbers in tuning {text!r}") from exc
        return ddl.TheoryTuning(a=a, sigma_e=sigma_e, sigma_j=sigma_j)
    raise CliError(f"unknown tuning {text!r} (expected cv or theory:A:sigmaE:sigmaJ)")


def read_csv_matrix(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a mandatory header row."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CliError(f"{path}: empty file")
            rows = []
            for ln, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise CliError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise CliError(f"{path}:{ln}: non-numeric value ({exc})")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}")
    if not rows:
        raise CliError(f"{path}: no data rows")
    return [h.strip() for h in header], np.asarray(rows, dtype=float)


def _load_json_config(path, allowed: set[str]) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot parse config {path}: {exc}")
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold a JSON object")
    unknown = set(doc) - allowed
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _merged_fit_options(args) -> dict:
    options: dict = {}
    if args.config:
        options.update(_load_json_config(args.config, _FIT_KEYS))
    cli_values = {
        "input": args.input, "response": args.response, "targets": args.targets,
        "rho": args.rho, "rho_j": args.rho_j, "alpha": args.alpha,
        "transform": args.transform, "tuning": args.tuning,
        "out_dir": args.out_dir, "seed": args.seed, "workers": args.workers,
    }
    for key, value in cli_values.items():
        if value is not None:
            options[key] = value
    defaults = {
        "targets": "all", "rho": 0.5, "rho_j": 0.5, "alpha": 0.05,
        "transform": "trim", "tuning": "cv", "out_dir": ".", "seed": 0, "workers": 1,
    }
    for key, value in defaults.items():
        options.setdefault(key, value)
    if "input" not in options:
        raise CliError("missing --input")
    if "response" not in options:
        raise CliError("missing --response")
    return options


def cmd_fit(args) -> int:
    options = _merged_fit_options(args)
    header, data = read_csv_matrix(options["input"])
    response = options["response"]
    if response not in header:
        raise CliError(f"response column {response!r} not in header")
    y_idx = header.index(response)
    Y = data[:, y_idx]
    feature_names = [h for i, h in enumerate(header) if i != y_idx]
    X = np.delete(data, y_idx, axis=1)

    # zero-variance columns carry no signal and break the penalty weights
    variances = X.var(axis=0)
    keep = variances > 0
    dropped = [name for name, ok in zip(feature_names, keep) if not ok]
    for name in dropped:
        logger.warning("dropping zero-variance column %r", name)
    X = X[:, keep]
    kept_names = [name for name, ok in zip(feature_names, keep) if ok]

    targets_spec = options["targets"]
    if targets_spec == "all":
        wanted = list(feature_names)
    else:
        wanted = [t.strip() for t in str(targets_spec).split(",") if t.strip()]
        missing = [t for t in wanted if t not in feature_names]
        if missing:
            raise CliError(f"target columns not in header: {missing}")

    kind, rank = parse_transform(options["transform"])
    tuning = options["tuning"]
    if isinstance(tuning, str):
        tuning = parse_tuning(tuning)
    config = ddl.DdlConfig(
        rho=float(options["rho"]), rho_j=float(options["rho_j"]),
        alpha=float(options["alpha"]), tuning=tuning,
        transform=kind, pca_rank=rank,
    )
    name_to_index = {name: i for i, name in enumerate(kept_names)}
    solvable = [t for t in wanted if t in name_to_index]
    indices = [name_to_index[t] for t in solvable]
    results = {}
    if indices:
        fitted = ddl.fit(
            X, Y, indices, config,
            seed=int(options["seed"]), workers=int(options["workers"]),
        )
        results = {kept_names[res.j]: res for res in fitted}

    out_dir = Path(options["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "estimates.csv"
    degenerate = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ESTIMATES_COLUMNS)
        for name in wanted:
            res = results.get(name)
            if res is None:
                writer.writerow([name] + [""] * 8 + ["dropped_zero_variance"])
                degenerate += 1
                continue
            if math.isnan(res.beta_hat):
                degenerate += 1
            writer.writerow([
                name, _fmt(res.beta_hat), _fmt(math.sqrt(res.variance)) if res.variance >= 0 else "nan",
                _fmt(res.ci_low), _fmt(res.ci_high), _fmt(res.p_value),
                _fmt(res.sigma_e2_hat), _fmt(res.lambda_used), _fmt(res.lambda_j_used),
                ";".join(res.flags),
            ])
    print(f"wrote {out_path}")
    if wanted and degenerate == len(wanted):
        return 3
    return 0


def _parse_grid_config(path, reps_override: int | None) -> tuple[list[bench.GridCell], ddl.DdlConfig]:
    doc = _load_json_config(path, _SIM_KEYS)
    ddl_doc = doc.get("ddl", {})
    unknown = set(ddl_doc) - _SIM_DDL_KEYS
    if unknown:
        raise CliError(f"unknown ddl config keys: {sorted(unknown)}")
    kind, rank = parse_transform(ddl_doc.get("transform", "trim"))
    tuning = parse_tuning(ddl_doc.get("tuning", "cv"))
    try:
        config = ddl.DdlConfig(
            rho=float(ddl_doc.get("rho", 0.5)),
            rho_j=float(ddl_doc.get("rho_j", 0.5)),
            alpha=float(ddl_doc.get("alpha", 0.05)),
            tuning=tuning, transform=kind, pca_rank=rank,
            center=bool(ddl_doc.get("center", False)),
            solver_tol=float(ddl_doc.get("solver_tol", 1e-7)),
        )
    except ValueError as exc:
        raise CliError(f"bad ddl config: {exc}")
    cells_doc = doc.get("cells")
    if not cells_doc:
        raise CliError("config needs a nonempty 'cells' list")
    cells = []
    for i, cell_doc in enumerate(cells_doc):
        if not isinstance(cell_doc, dict):
            raise CliError(f"cell {i} must be an object")
        unknown = set(cell_doc) - _CELL_KEYS
        if unknown:
            raise CliError(f"cell {i}: unknown keys {sorted(unknown)}")
        if "scenario" not in cell_doc:
            raise CliError(f"cell {i}: missing scenario")
        try:
            scenario = simgen.Scenario.from_dict(cell_doc["scenario"])
            cell = bench.GridCell(
                scenario=scenario,
                methods=tuple(cell_doc.get("methods", ("ddl",))),
                reps=int(reps_override or cell_doc.get("reps", 1)),
                axis=str(cell_doc.get("axis", "")),
                axis_value=cell_doc.get("axis_value", ""),
            )
        except (ValueError, TypeError) as exc:
            raise CliError(f"cell {i}: {exc}")
        cells.append(cell)
    return cells, config


def cmd_simulate(args) -> int:
    if not args.config:
        raise CliError("simulate needs --config")
    cells, config = _parse_grid_config(args.config, args.reps)
    report = bench.run_grid(
        cells, config, master_seed=int(args.seed or 0), workers=int(args.workers or 1)
    )
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_report_csv(out_dir / "report.csv")
    report.write_records_csv(out_dir / "records.csv")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'records.csv'}")
    return 0


def cmd_diagnose(args) -> int:
    if not args.input:
        raise CliError("diagnose needs --input")
    header, X = read_csv_matrix(args.input)
    rho = 0.5 if args.rho is None else float(args.rho)
    factors = spectral.svd_thin(X)
    transform = spectral.trim_transform(factors, rho)
    diag = spectral.check_p1(transform, X)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    spectrum_path = out_dir / "spectrum.csv"
    with open(spectrum_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "singular_value", "shrink_factor"])
        for i, (value, shrink) in enumerate(zip(factors.s, transform.shrink)):
            writer.writerow([i, _fmt(value), _fmt(shrink)])
    median_sv = float(np.median(factors.s)) if factors.s.size else 0.0
    spike = float(factors.s[0]) / median_sv if median_sv > 0 else float("inf")
    print(f"wrote {spectrum_path}")
    print(f"rho: {_fmt(rho)}")
    print(f"spike_ratio: {_fmt(spike)}")
    print(f"op_norm_ratio: {_fmt(diag.op_norm_ratio)} (ok: {diag.op_norm_ok})")
    print(f"trace4_ratio: {_fmt(diag.trace4_ratio)} (ok: {diag.trace4_ok})")
    print(f"trace2: {_fmt(diag.trace2)}")
    print(f"trace4: {_fmt(diag.trace4)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddlasso",
        description="Confidence intervals for high-dimensional regression "
        "coefficients under dense hidden confounding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a CSV dataset and write estimates.csv")
    fit.add_argument("--input")
    fit.add_argument("--response")
    fit.add_argument("--targets", help="comma-separated column names or 'all'")
    fit.add_argument("--rho", type=float)
    fit.add_argument("--rho-j", dest="rho_j", type=float)
    fit.add_argument("--alpha", type=float)
    fit.add_argument("--transform", help="trim, pca:K or identity")
    fit.add_argument("--tuning", help="cv or theory:A:sigmaE:sigmaJ")
    fit.add_argument("--config", help="JSON file with the same options")
    fit.add_argument("--out-dir", dest="out_dir")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--workers", type=int)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run a simulation grid from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out-dir", dest="out_dir")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--reps", type=int, help="override the per-cell replication count")
    sim.set_defaults(func=cmd_simulate)

    diag = sub.add_parser("diagnose", help="singular spectrum and shrinkage diagnostics")
    diag.add_argument("--input", required=True)
    diag.add_argument("--rho", type=float)
    diag.add_argument("--out-dir", dest="out_dir")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
