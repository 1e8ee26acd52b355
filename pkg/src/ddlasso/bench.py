"""Monte-Carlo replication harness for coverage and bias studies.

Each replication samples a dataset, runs one of three estimators on the
first coefficient and records the coverage indicator together with the two
scaled bias terms

    B_beta = s * Z^T P^2 X_{-j} (beta_{-j} - beta_init_{-j}) / sqrt(sigma_e^2 Z^T P^4 Z)
    B_b    = s * Z^T P^2 X b / sqrt(sigma_e^2 Z^T P^4 Z),   s = sign(Z^T P^2 X_j),

using the true noise level, so that
beta_hat_j - beta_j = Z^T P^2 eps / Z^T P^2 X_j + sqrt(V) (B_beta + B_b)
holds exactly per replication.  Grids of scenarios run embarrassingly
parallel with seeds derived per (cell, replication), so reports are
byte-identical for any worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ddl import DdlConfig, DdlInternals, fit_detailed
from .simgen import Dataset, GroundTruth, Scenario, sample_dataset

METHODS = ("ddl", "debiased_lasso", "debiased_lasso_shared_init")

RECORD_COLUMNS = (
    "cell", "axis", "axis_value", "method", "rep", "beta_hat", "V", "covered",
    "B_beta", "B_b", "sigma_e2_hat", "ci_low", "ci_high", "flags",
)
REPORT_COLUMNS = ("scenario_axis", "axis_value", "method", "metric", "value")
REPORT_METRICS = (
    "coverage", "mean_abs_B_beta", "mean_abs_B_b", "mean_sqrt_V",
    "replications", "failures",
)


def method_config(base: DdlConfig, method: str) -> DdlConfig:
    """Estimator variants compared in the studies.

    "ddl" uses the configured transforms; "debiased_lasso" replaces both by
    the identity; "debiased_lasso_shared_init" keeps the deconfounding
    initial estimator but projects without shrinkage.
    """
    if method == "ddl":
        return base
    if method == "debiased_lasso":
        return replace(base, transform="identity", proj_transform="identity")
    if method == "debiased_lasso_shared_init":
        return replace(base, proj_transform="identity")
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ReplicationRecord:
    method: str
    rep: int
    beta_hat: float
    V: float  # variance with the true noise level (reported scale)
    covered: bool | None
    B_beta: float
    B_b: float
    sigma_e2_hat: float
    ci_low: float
    ci_high: float
    flags: tuple[str, ...] = ()
    cell: int = 0
    axis: str = ""
    axis_value: float | str = ""

    @property
    def failed(self) -> bool:
        return self.covered is None


def scaled_bias_terms(
    internals: DdlInternals, truth: GroundTruth, sigma_e2_true: float
) -> tuple[float, float]:
    """Standardized bias contributions of the initial-estimator error and of
    the confounding-induced perturbation b, using the true noise level."""
    j = internals.j
    P2Z = internals.proj.P2Zj
    den = internals.denominator
    quartic = float(P2Z @ P2Z)
    scale = np.sign(den) * float(np.sqrt(sigma_e2_true * quartic))
    if scale == 0.0:
        raise ZeroDivisionError("degenerate bias scale")
    diff = np.delete(truth.beta, j) - np.delete(internals.init.coef, j)
    others = np.delete(internals.X, j, axis=1)
    b_beta = float(P2Z @ (others @ diff)) / scale
    b_b = float(P2Z @ (internals.X @ truth.b)) / scale
    return b_beta, b_b


def _fold_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def run_replication(
    scenario: Scenario,
    method: str,
    config: DdlConfig | None = None,
    seed=0,
    target: int = 0,
) -> ReplicationRecord:
    """One seeded replication of one estimator on one scenario (target j=1,
    i.e. column 0).  Failures are flagged, not raised."""
    config = config or DdlConfig(center=False)
    cfg = method_config(config, method)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    dataset = sample_dataset(scenario, ss)
    fold_seed = _fold_seed(ss)
    result, internals = fit_detailed(dataset.X, dataset.Y, [target], cfg, seed=fold_seed)[0]
    sigma2_true = scenario.sigma_e**2
    if internals is None:
        nan = float("nan")
        return ReplicationRecord(
            method=method, rep=0, beta_hat=nan, V=nan, covered=None,
            B_beta=nan, B_b=nan, sigma_e2_hat=result.sigma_e2_hat,
            ci_low=nan, ci_high=nan, flags=result.flags,
        )
    b_beta, b_b = scaled_bias_terms(internals, dataset.truth, sigma2_true)
    quartic = float(internals.proj.P2Zj @ internals.proj.P2Zj)
    v_true = sigma2_true * quartic / internals.denominator**2
    beta_true = float(dataset.truth.beta[target])
    covered = bool(result.ci_low <= beta_true <= result.ci_high)
    return ReplicationRecord(
        method=method, rep=0, beta_hat=result.beta_hat, V=v_true, covered=covered,
        B_beta=b_beta, B_b=b_b, sigma_e2_hat=result.sigma_e2_hat,
        ci_low=result.ci_low, ci_high=result.ci_high, flags=result.flags,
    )


@dataclass
class GridCell:
    scenario: Scenario
    methods: tuple[str, ...] = ("ddl",)
    reps: int = 1
    axis: str = ""
    axis_value: float | str = ""

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass
class MonteCarloReport:
    cells: list[GridCell]
    records: list[ReplicationRecord]

    def aggregate(self) -> list[dict]:
        """Per (cell, method) summary rows in fixed order."""
        rows = []
        for ci, cell in enumerate(self.cells):
            for method in cell.methods:
                recs = [r for r in self.records if r.cell == ci and r.method == method]
                good = [r for r in recs if not r.failed]
                failures = len(recs) - len(good)
                cov = float(np.mean([r.covered for r in good])) if good else float("nan")
                metrics = {
                    "coverage": cov,
                    "mean_abs_B_beta": float(np.mean([abs(r.B_beta) for r in good])) if good else float("nan"),
                    "mean_abs_B_b": float(np.mean([abs(r.B_b) for r in good])) if good else float("nan"),
                    "mean_sqrt_V": float(np.mean([np.sqrt(r.V) for r in good])) if good else float("nan"),
                    "replications": float(len(good)),
                    "failures": float(failures),
                }
                rows.append({
                    "cell": ci, "axis": cell.axis, "axis_value": cell.axis_value,
                    "method": method, "metrics": metrics,
                })
        return rows

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for r in self.records:
                writer.writerow([
                    r.cell, r.axis, _fmt(r.axis_value), r.method, r.rep,
                    _fmt(r.beta_hat), _fmt(r.V),
                    "" if r.covered is None else str(r.covered).lower(),
                    _fmt(r.B_beta), _fmt(r.B_b), _fmt(r.sigma_e2_hat),
                    _fmt(r.ci_low), _fmt(r.ci_high), ";".join(r.flags),
                ])

    def write_report_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.aggregate():
                for metric in REPORT_METRICS:
                    writer.writerow([
                        row["axis"], _fmt(row["axis_value"]), row["method"],
                        metric, _fmt(row["metrics"][metric]),
                    ])


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.15g}"


def _cell_task(args) -> tuple[int, int, list[ReplicationRecord]]:
    cell_index, rep, cell, config, master_seed = args
    ss = np.random.SeedSequence([int(master_seed), cell_index, rep])
    records = []
    for method in cell.methods:
        rec = run_replication(cell.scenario, method, config, seed=ss)
        rec.rep = rep
        rec.cell = cell_index
        rec.axis = cell.axis
        rec.axis_value = cell.axis_value
        records.append(rec)
    return cell_index, rep, records


def run_grid(
    cells,
    config: DdlConfig | None = None,
    master_seed: int = 0,
    workers: int = 1,
) -> MonteCarloReport:
    """Run every (cell, replication) pair; deterministic for any worker count.

    All methods within one replication share the dataset (paired
    comparison): the replication seed derives only from
    (master_seed, cell index, replication index).
    """
    cells = list(cells)
    config = config or DdlConfig(center=False)
    tasks = [
        (ci, rep, cell, config, master_seed)
        for ci, cell in enumerate(cells)
        for rep in range(cell.reps)
    ]
    results: dict[tuple[int, int], list[ReplicationRecord]] = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ci, rep, recs in pool.map(_cell_task, tasks, chunksize=1):
                results[(ci, rep)] = recs
    else:
        for task in tasks:
            ci, rep, recs = _cell_task(task)
            results[(ci, rep)] = recs
    records = [rec for key in sorted(results) for rec in results[key]]
    return MonteCarloReport(cells=cells, records=records)


def jaccard_topk(pvals_a, pvals_b, k: int) -> float:
    """Jaccard distance between the index sets of the k smallest p-values.

    Ties are broken by ascending index.
    """
    pa = np.asarray(pvals_a, dtype=float)
    pb = np.asarray(pvals_b, dtype=float)
    if pa.shape != pb.shape or pa.ndim != 1:
        raise ValueError("p-value vectors must be 1-d with equal length")
    if not 1 <= k <= pa.size:
        raise ValueError(f"k must lie in [1, {pa.size}]")
    idx = np.arange(pa.size)
    top_a = set(idx[np.lexsort((idx, pa))][:k].tolist())
    top_b = set(idx[np.lexsort((idx, pb))][:k].tolist())
    union = len(top_a | top_b)
    inter = len(top_a & top_b)
    return 1.0 - inter / union
