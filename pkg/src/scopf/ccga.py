"""Column-and-constraint generation for secure dispatch, plus the
feasibility-recovery variant and the parallel bounds race.

Each iteration solves a master model, balances every contingency by
bisection, scans thermal violations of the balanced responses, and grows the
working sets until the worst violation is within tolerance.  Termination is
decided by the bisection/scan audit, never by solver status alone.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .apr import ContingencyState, bisect_balance, scan_violations
from .formulations import (
    CutSet,
    MilpModel,
    SolverBackend,
    build_fr_master,
    build_master,
)
from .grid import Grid, LoadVector, build_ptdf, flow_cuts


class MasterInfeasibleError(RuntimeError):
    """The master model is infeasible: load exceeds secure capability."""


class BackendFailureError(RuntimeError):
    """The solver backend returned no usable solution."""


@dataclass(frozen=True)
class CcgaConfig:
    epsilon: float = 0.05            # MW, line-violation tolerance
    beta: float | None = None        # MW, cut-addition threshold (default: epsilon)
    rel_gap: float = 0.0025
    time_limit: float | None = None  # seconds, wall clock for the whole run
    max_iterations: int = 100
    bisect_tol: float | None = None  # MW (default: 1e-6 * total load)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def cut_threshold(self) -> float:
        return self.epsilon if self.beta is None else self.beta


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    time_s: float                   # wall clock since run start
    objective: float                # master objective at this iterate
    phi_mw: float
    n_states: int
    n_cuts: int
    audit_residual: float           # worst balance residual over contingencies


@dataclass
class CcgaResult:
    g: np.ndarray
    states: dict[int, ContingencyState]
    objective: float                # generation cost h(g)
    iterations: int
    phi: float
    cuts: CutSet
    trace: list[IterationRecord]
    status: str                     # optimal | iteration_limit | time_limit | stopped
    solve_time_s: float             # solver calls only
    total_time_s: float
    audit_max_residual: float
    best_bound: float | None
    distance: float | None = None   # L1 distance to the seed (recovery runs)


IterationCallback = Callable[[IterationRecord, float | None], bool]


def _run_loop(
    grid: Grid,
    d,
    cfg: CcgaConfig,
    backend: SolverBackend,
    build,
    callback: IterationCallback | None,
) -> CcgaResult:
    dv = d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)
    total_load = float(dv.sum())
    bisect_tol = cfg.bisect_tol
    if bisect_tol is None:
        bisect_tol = 1e-6 * max(abs(total_load), 1.0)
    ptdf = build_ptdf(grid)
    fc = flow_cuts(ptdf, grid, dv)
    cuts = CutSet()
    trace: list[IterationRecord] = []
    t0 = time.perf_counter()
    solve_time = 0.0
    audit_worst = 0.0
    status = "iteration_limit"
    best: tuple | None = None

    for it in range(1, cfg.max_iterations + 1):
        model = build(cuts, ptdf)
        remaining = None
        if cfg.time_limit is not None:
            remaining = cfg.time_limit - (time.perf_counter() - t0)
            if remaining <= 0:
                status = "time_limit"
                break
        res = backend.solve(model, rel_gap=cfg.rel_gap, time_limit=remaining)
        if res.status == "infeasible":
            raise MasterInfeasibleError(
                f"master infeasible at iteration {it} (total load {total_load:.1f} MW)"
            )
        if res.status in ("unbounded", "failed") or res.x is None:
            if res.status == "limit":
                status = "time_limit"
                break
            raise BackendFailureError(f"backend status {res.status} at iteration {it}")
        solve_time += res.wall_time
        sol = model.decode(res.x)
        states = [
            bisect_balance(grid, sol.g, s, dv, tol=bisect_tol)
            for s in grid.contingencies
        ]
        audit_worst = max(audit_worst, max((st.residual for st in states), default=0.0))
        report = scan_violations(states, fc)
        record = IterationRecord(
            iteration=it,
            time_s=time.perf_counter() - t0,
            objective=float(res.objective),
            phi_mw=report.phi,
            n_states=len(cuts.states),
            n_cuts=cuts.n_cuts,
            audit_residual=max((st.residual for st in states), default=0.0),
        )
        trace.append(record)
        best = (sol.g.copy(), {st.s: st for st in states}, report.phi, res.best_bound)
        if callback is not None and not callback(record, res.best_bound):
            status = "stopped"
            break
        if report.phi <= cfg.epsilon:
            status = "optimal"
            break
        grew = cuts.n_cuts + len(cuts.states)
        cuts.states.add(report.s_phi)
        thr = cfg.cut_threshold
        for s, tau in report.tau_pos.items():
            for line in np.nonzero(tau > thr)[0]:
                cuts.upper_pairs.add((int(line), s))
        for s, tau in report.tau_neg.items():
            for line in np.nonzero(tau > thr)[0]:
                cuts.lower_pairs.add((int(line), s))
        # the attaining pair always enters, even above-threshold-free scans
        wl = report.worst_line[report.s_phi]
        if report.tau_pos[report.s_phi][wl] >= report.tau_neg[report.s_phi][wl]:
            cuts.upper_pairs.add((int(wl), report.s_phi))
        else:
            cuts.lower_pairs.add((int(wl), report.s_phi))
        if cuts.n_cuts + len(cuts.states) == grew:
            raise BackendFailureError(
                f"no working-set growth at iteration {it} (phi={report.phi:.3g} MW)"
            )

    if best is None:
        raise BackendFailureError("no master solution obtained within limits")
    g, states_map, phi, bound = best
    return CcgaResult(
        g=g,
        states=states_map,
        objective=grid.cost(g),
        iterations=len(trace),
        phi=phi,
        cuts=cuts,
        trace=trace,
        status=status,
        solve_time_s=solve_time,
        total_time_s=time.perf_counter() - t0,
        audit_max_residual=audit_worst,
        best_bound=bound,
    )


def run_ccga(
    grid: Grid,
    d,
    cfg: CcgaConfig | None = None,
    backend: SolverBackend | None = None,
    callback: IterationCallback | None = None,
) -> CcgaResult:
    """Minimum-cost secure dispatch by column-and-constraint generation."""
    cfg = cfg or CcgaConfig()
    backend = backend or _default_backend()
    build = lambda cuts, ptdf: build_master(grid, d, cuts, ptdf=ptdf)
    return _run_loop(grid, d, cfg, backend, build, callback)


def run_fr_ccga(
    grid: Grid,
    d,
    g_hat,
    cfg: CcgaConfig | None = None,
    backend: SolverBackend | None = None,
    callback: IterationCallback | None = None,
) -> CcgaResult:
    """Feasibility recovery: the secure dispatch closest (L1) to ``g_hat``."""
    g_hat = np.asarray(g_hat, dtype=float)
    if g_hat.shape != (grid.n_gen,):
        raise ValueError(f"g_hat has shape {g_hat.shape}, expected ({grid.n_gen},)")
    cfg = cfg or CcgaConfig()
    backend = backend or _default_backend()
    build = lambda cuts, ptdf: build_fr_master(grid, d, cuts, g_hat, ptdf=ptdf)
    result = _run_loop(grid, d, cfg, backend, build, callback)
    result.distance = float(np.abs(g_hat - result.g).sum())
    return result


def _default_backend() -> SolverBackend:
    from .solvers import HighsBackend

    return HighsBackend()


@dataclass(frozen=True)
class GapEvent:
    time_s: float
    source: str                 # "ccga" or "fr"
    lb: float
    ub: float
    gap: float                  # (ub - lb) / |ub|, inf until both sides exist


@dataclass
class GapTrace:
    events: list[GapEvent] = field(default_factory=list)
    lb: float = -np.inf
    ub: float = np.inf
    gap: float = np.inf
    ccga: CcgaResult | None = None
    fr: CcgaResult | None = None
    status: str = "running"


class RaceError(RuntimeError):
    """A bounds-race child failed; ``trace`` holds the partial trace."""

    def __init__(self, message: str, trace: GapTrace):
        super().__init__(message)
        self.trace = trace


def run_bounds_race(
    grid: Grid,
    d,
    g_hat,
    cfg: CcgaConfig | None = None,
    backends: tuple[SolverBackend, SolverBackend] | None = None,
) -> GapTrace:
    """Race feasibility recovery (upper bounds) against the exact loop (lower
    bounds), stopping both once the relative gap closes below ``cfg.rel_gap``.

    The two sides run on independent backend handles in separate threads and
    publish bound updates as they occur; the merged, time-stamped envelope is
    returned even when one side is cut short.
    """
    cfg = cfg or CcgaConfig()
    if backends is None:
        backends = (_default_backend(), _default_backend())
    trace = GapTrace()
    lock = threading.Lock()
    stop = threading.Event()
    t0 = time.perf_counter()

    def note(source: str, lb: float | None = None, ub: float | None = None) -> None:
        with lock:
            if lb is not None:
                trace.lb = max(trace.lb, lb)
            if ub is not None:
                trace.ub = min(trace.ub, ub)
            if np.isfinite(trace.lb) and np.isfinite(trace.ub):
                trace.gap = (trace.ub - trace.lb) / max(abs(trace.ub), 1e-12)
            trace.events.append(
                GapEvent(time.perf_counter() - t0, source, trace.lb, trace.ub, trace.gap)
            )
            if trace.gap <= cfg.rel_gap:
                stop.set()

    errors: list[tuple[str, BaseException]] = []

    def lb_side():
        try:
            def cb(record: IterationRecord, bound: float | None) -> bool:
                if bound is not None:
                    note("ccga", lb=bound)
                return not stop.is_set()

            result = run_ccga(grid, d, cfg, backends[0], callback=cb)
            trace.ccga = result
            if result.status == "optimal":
                note("ccga", ub=result.objective)
        except BaseException as exc:  # noqa: BLE001 - propagated after join
            errors.append(("ccga", exc))
            stop.set()

    def ub_side():
        try:
            def cb(record: IterationRecord, bound: float | None) -> bool:
                return not stop.is_set()

            result = run_fr_ccga(grid, d, g_hat, cfg, backends[1], callback=cb)
            trace.fr = result
            if result.status == "optimal":
                note("fr", ub=result.objective)
        except BaseException as exc:  # noqa: BLE001
            errors.append(("fr", exc))
            stop.set()

    threads = [threading.Thread(target=lb_side), threading.Thread(target=ub_side)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        side, exc = errors[0]
        trace.status = "error"
        raise RaceError(f"{side} side failed: {exc}", trace) from exc
    trace.status = "gap_closed" if trace.gap <= cfg.rel_gap else "finished"
    return trace


def write_trace_csv(result: CcgaResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "time_s", "objective", "phi_MW", "n_S", "n_cuts"])
        for r in result.trace:
            w.writerow([r.iteration, f"{r.time_s:.6f}", f"{r.objective:.6f}",
                        f"{r.phi_mw:.6f}", r.n_states, r.n_cuts])


def write_gap_csv(trace: GapTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["time_s", "source", "lower_bound", "upper_bound", "gap"])
        for e in trace.events:
            w.writerow([f"{e.time_s:.6f}", e.source, f"{e.lb:.6f}",
                        f"{e.ub:.6f}", f"{e.gap:.8f}"])
