"""Benchmark harness and report statistics.

For each benchmark instance: predict a dispatch, recover feasibility from the
prediction, and solve the instance exactly for reference.  Per-instance rows
carry everything the aggregate statistics need, so a report is a pure
function of the emitted CSV.  Reported times cover solver calls only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .apr import bisect_balance, scan_violations
from .ccga import CcgaConfig, MasterInfeasibleError, BackendFailureError, run_ccga, run_fr_ccga
from .datagen import Dataset
from .formulations import SolverBackend
from .grid import Grid, build_ptdf, flow_cuts
from .learner import TrainedModel, predict

GENERATION_BANDS = (
    (10.0, 50.0), (50.0, 100.0), (100.0, 250.0), (250.0, 500.0),
    (500.0, 1000.0), (1000.0, 2000.0), (2000.0, 5000.0),
)


def band_label(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


@dataclass
class BenchRow:
    index: int
    total_load: float
    predict_time_s: float
    balance_violation_pct: float       # prediction imbalance over total load
    rlv_pct: float                     # worst-line violation over its capacity
    distance_pct: float                # L1(prediction, recovered) over recovered total
    fr_time_s: float
    ccga_time_s: float
    fr_cost: float
    ccga_cost: float
    cost_increase_pct: float
    fr_phi: float
    ccga_phi: float
    fr_iterations: int
    ccga_iterations: int
    band_abs_err: dict[str, float] = field(default_factory=dict)
    band_ref_sum: dict[str, float] = field(default_factory=dict)
    band_count: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Stats:
    median: float
    mean: float
    min: float
    max: float
    std: float


@dataclass(frozen=True)
class IntervalStats:
    median: float
    lo: float                          # 2.5th percentile, nearest rank
    hi: float                          # 97.5th percentile, nearest rank


@dataclass
class MetricsReport:
    n_instances: int
    n_failed: int
    mae_by_band_pct: dict[str, float | None]
    balance: IntervalStats
    rlv: IntervalStats
    distance: IntervalStats
    fr_time: Stats
    ccga_time: Stats
    cost_increase: Stats


def nearest_rank(values, q: float) -> float:
    """Empirical q-quantile by the nearest-rank rule."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return math.nan
    rank = max(1, math.ceil(q * v.size))
    return float(v[rank - 1])


def _stats(values) -> Stats:
    v = np.asarray(values, dtype=float)
    return Stats(median=float(np.median(v)), mean=float(v.mean()),
                 min=float(v.min()), max=float(v.max()), std=float(v.std()))


def _interval(values) -> IntervalStats:
    v = np.asarray(values, dtype=float)
    return IntervalStats(median=float(np.median(v)),
                         lo=nearest_rank(v, 0.025), hi=nearest_rank(v, 0.975))


def prediction_violations(grid: Grid, d: np.ndarray, g_hat: np.ndarray) -> tuple[float, float]:
    """(balance %, worst-line relative violation %) of a raw prediction."""
    total = float(d.sum())
    balance_pct = 100.0 * abs(float(g_hat.sum()) - total) / total
    ptdf = build_ptdf(grid)
    fc = flow_cuts(ptdf, grid, d)
    states = [bisect_balance(grid, g_hat, s, d) for s in grid.contingencies]
    report = scan_violations(states, fc)
    rlv_pct = 0.0
    if report.s_phi is not None and report.phi > 0:
        line = report.worst_line[report.s_phi]
        rlv_pct = 100.0 * report.phi / grid.line_capacity[line]
    return balance_pct, rlv_pct


def bench_instance(grid: Grid, model: TrainedModel, index: int, d: np.ndarray,
                   cfg: CcgaConfig, backend: SolverBackend) -> BenchRow:
    pred = predict(model, grid, d)
    balance_pct, rlv_pct = prediction_violations(grid, d, pred.g)
    fr = run_fr_ccga(grid, d, pred.g, cfg, backend)
    ref = run_ccga(grid, d, cfg, backend)
    if fr.status != "optimal" or ref.status != "optimal":
        raise BackendFailureError(
            f"instance {index}: fr={fr.status}, ccga={ref.status}"
        )
    row = BenchRow(
        index=index,
        total_load=float(d.sum()),
        predict_time_s=pred.wall_time_s,
        balance_violation_pct=balance_pct,
        rlv_pct=rlv_pct,
        distance_pct=100.0 * fr.distance / max(float(fr.g.sum()), 1e-12),
        fr_time_s=fr.solve_time_s,
        ccga_time_s=ref.solve_time_s,
        fr_cost=fr.objective,
        ccga_cost=ref.objective,
        cost_increase_pct=100.0 * (fr.objective - ref.objective) / abs(ref.objective),
        fr_phi=fr.phi,
        ccga_phi=ref.phi,
        fr_iterations=fr.iterations,
        ccga_iterations=ref.iterations,
    )
    for lo, hi in GENERATION_BANDS:
        label = band_label(lo, hi)
        mask = (ref.g >= lo) & (ref.g < hi)
        row.band_abs_err[label] = float(np.abs(pred.g - ref.g)[mask].sum())
        row.band_ref_sum[label] = float(ref.g[mask].sum())
        row.band_count[label] = int(mask.sum())
    return row


def run_bench(grid: Grid, model: TrainedModel, dataset: Dataset, n_instances: int,
              seed: int, cfg: CcgaConfig | None = None,
              backend: SolverBackend | None = None,
              log=None) -> tuple[list[BenchRow], list[dict]]:
    """Benchmark on instances sampled from a labeled dataset.

    Instances run sequentially so the timing comparison is uncontended.
    Per-instance failures are collected, not fatal.
    """
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    cfg = cfg or CcgaConfig()
    if backend is None:
        from .solvers import HighsBackend

        backend = HighsBackend()
    rng = np.random.default_rng(seed)
    n = min(n_instances, len(dataset.records))
    picks = sorted(rng.choice(len(dataset.records), size=n, replace=False).tolist())
    rows: list[BenchRow] = []
    failures: list[dict] = []
    for k in picks:
        rec = dataset.records[k]
        try:
            rows.append(bench_instance(grid, model, rec.index, rec.d, cfg, backend))
        except (MasterInfeasibleError, BackendFailureError) as exc:
            failures.append({"index": rec.index, "error": str(exc)})
        if log is not None:
            log(len(rows) + len(failures), n)
    return rows, failures


def aggregate(rows: list[BenchRow], n_failed: int = 0) -> MetricsReport:
    """Pure aggregation of per-instance rows into the report statistics."""
    if not rows:
        raise ValueError("no benchmark rows to aggregate")
    mae: dict[str, float | None] = {}
    for lo, hi in GENERATION_BANDS:
        label = band_label(lo, hi)
        err = sum(r.band_abs_err.get(label, 0.0) for r in rows)
        ref = sum(r.band_ref_sum.get(label, 0.0) for r in rows)
        mae[label] = 100.0 * err / ref if ref > 0 else None
    return MetricsReport(
        n_instances=len(rows),
        n_failed=n_failed,
        mae_by_band_pct=mae,
        balance=_interval([r.balance_violation_pct for r in rows]),
        rlv=_interval([r.rlv_pct for r in rows]),
        distance=_interval([r.distance_pct for r in rows]),
        fr_time=_stats([r.fr_time_s for r in rows]),
        ccga_time=_stats([r.ccga_time_s for r in rows]),
        cost_increase=_stats([r.cost_increase_pct for r in rows]),
    )


_ROW_FIELDS = [
    "index", "total_load", "predict_time_s", "balance_violation_pct", "rlv_pct",
    "distance_pct", "fr_time_s", "ccga_time_s", "fr_cost", "ccga_cost",
    "cost_increase_pct", "fr_phi", "ccga_phi", "fr_iterations", "ccga_iterations",
]


def write_rows_csv(rows: list[BenchRow], path) -> None:
    band_labels = [band_label(lo, hi) for lo, hi in GENERATION_BANDS]
    header = list(_ROW_FIELDS)
    for label in band_labels:
        header += [f"abs_err_{label}", f"ref_sum_{label}", f"count_{label}"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            out = [getattr(r, name) for name in _ROW_FIELDS]
            for label in band_labels:
                out += [r.band_abs_err.get(label, 0.0),
                        r.band_ref_sum.get(label, 0.0),
                        r.band_count.get(label, 0)]
            w.writerow(out)


def format_report(report: MetricsReport) -> str:
    """Aligned plain-text report table."""
    lines = []
    lines.append(f"instances: {report.n_instances}   failed: {report.n_failed}")
    lines.append("")
    lines.append("prediction MAE by generation band (% of band output)")
    lines.append(f"  {'band MW':>12} {'MAE %':>10}")
    for label, value in report.mae_by_band_pct.items():
        shown = f"{value:.3f}" if value is not None else "n/a"
        lines.append(f"  {label:>12} {shown:>10}")
    lines.append("")
    lines.append(f"  {'metric':<28}{'median':>10}{'2.5%':>10}{'97.5%':>10}")
    for name, block in (("balance violation %", report.balance),
                        ("relative line violation %", report.rlv),
                        ("distance to feasible %", report.distance)):
        lines.append(f"  {name:<28}{block.median:>10.4f}{block.lo:>10.4f}{block.hi:>10.4f}")
    lines.append("")
    lines.append(f"  {'metric':<28}{'median':>10}{'mean':>10}{'min':>10}{'max':>10}{'std':>10}")
    for name, block in (("recovery time s", report.fr_time),
                        ("exact solve time s", report.ccga_time),
                        ("cost increase %", report.cost_increase)):
        lines.append(
            f"  {name:<28}{block.median:>10.3f}{block.mean:>10.3f}"
            f"{block.min:>10.3f}{block.max:>10.3f}{block.std:>10.3f}"
        )
    return "\n".join(lines) + "\n"
