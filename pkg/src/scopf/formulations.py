"""MILP formulations: extensive form, CCG master, feasibility-recovery master.

Models are plain data (sparse rows + bounds + objective) with an index map
back to the dispatch semantics, solved through the :class:`SolverBackend`
contract.  Construction is pure; one backend handle runs one solve at a time.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .grid import Grid, LoadVector, PtdfModel, build_ptdf, flow_cuts


@dataclass
class CutSet:
    """Working sets of the column-and-constraint generation loop.

    ``states`` holds contingencies with full response blocks; the pair sets
    hold (line index, contingency id) thermal rows for the upper and lower
    flow direction.  All three only ever grow.
    """

    states: set[int] = field(default_factory=set)
    upper_pairs: set[tuple[int, int]] = field(default_factory=set)
    lower_pairs: set[tuple[int, int]] = field(default_factory=set)

    @property
    def n_cuts(self) -> int:
        return len(self.upper_pairs) + len(self.lower_pairs)

    def copy(self) -> "CutSet":
        return CutSet(set(self.states), set(self.upper_pairs), set(self.lower_pairs))


@dataclass(frozen=True)
class DecodedSolution:
    """Solver primal values mapped back to dispatch semantics."""

    g: np.ndarray
    gprime: dict[int, np.ndarray]
    gs: dict[int, np.ndarray]
    xs: dict[int, np.ndarray]
    ns: dict[int, float]
    abs_dev: np.ndarray | None = None


@dataclass
class MilpModel:
    """Sparse linear model: min c @ x s.t. row_lb <= A x <= row_ub, lb <= x <= ub."""

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    a: sp.csr_matrix
    row_lb: np.ndarray
    row_ub: np.ndarray
    groups: dict
    row_names: list[str]
    var_names: list[str]

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @property
    def n_binaries(self) -> int:
        return int(self.integrality.sum())

    def decode(self, x: np.ndarray) -> DecodedSolution:
        g = x[self.groups["g"]]
        gprime, gs, xs, ns = {}, {}, {}, {}
        for key, idx in self.groups.items():
            if not isinstance(key, tuple):
                continue
            kind, s = key
            if kind == "gp":
                gprime[s] = x[idx]
            elif kind == "gs":
                gs[s] = x[idx]
            elif kind == "xs":
                vals = np.zeros(len(idx))
                mask = idx >= 0
                vals[mask] = x[idx[mask]]
                xs[s] = vals
            elif kind == "ns":
                ns[s] = float(x[idx])
        abs_dev = x[self.groups["abs"]] if "abs" in self.groups else None
        return DecodedSolution(g=g, gprime=gprime, gs=gs, xs=xs, ns=ns, abs_dev=abs_dev)

    def check(self, x: np.ndarray, tol: float = 1e-6) -> float:
        """Largest constraint/bound/integrality violation of a primal point."""
        ax = self.a @ x
        worst = 0.0
        worst = max(worst, float(np.max(self.row_lb - ax, initial=0.0)))
        worst = max(worst, float(np.max(ax - self.row_ub, initial=0.0)))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.ub, initial=0.0)))
        ints = self.integrality > 0
        if ints.any():
            worst = max(worst, float(np.max(np.abs(x[ints] - np.round(x[ints])))))
        return worst

    def to_lp(self) -> str:
        """Model in LP-format text, for debugging."""
        def term(coef, name):
            sign = "+" if coef >= 0 else "-"
            return f"{sign} {abs(coef):.12g} {name}"

        out = ["Minimize", " obj: " + " ".join(
            term(c, self.var_names[j]) for j, c in enumerate(self.c) if c != 0.0
        ), "Subject To"]
        acoo = self.a.tocoo()
        rows: list[list[str]] = [[] for _ in range(self.n_rows)]
        for r, j, v in zip(acoo.row, acoo.col, acoo.data):
            rows[r].append(term(v, self.var_names[j]))
        for r in range(self.n_rows):
            expr = " ".join(rows[r])
            lo, hi = self.row_lb[r], self.row_ub[r]
            name = self.row_names[r]
            if lo == hi:
                out.append(f" {name}: {expr} = {lo:.12g}")
            else:
                if np.isfinite(lo):
                    out.append(f" {name}_l: {expr} >= {lo:.12g}")
                if np.isfinite(hi):
                    out.append(f" {name}_u: {expr} <= {hi:.12g}")
        out.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lb[j], self.ub[j]
            lo_s = f"{lo:.12g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.12g}" if np.isfinite(hi) else "+inf"
            out.append(f" {lo_s} <= {self.var_names[j]} <= {hi_s}")
        binaries = [self.var_names[j] for j in range(self.n_vars) if self.integrality[j]]
        if binaries:
            out.append("Binary")
            out.append(" " + " ".join(binaries))
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class SolveResult:
    status: str                      # optimal | infeasible | unbounded | limit | failed
    objective: float | None
    x: np.ndarray | None
    best_bound: float | None
    gap: float | None
    wall_time: float


class SolverBackend(ABC):
    """Exact MILP solver contract.

    Implementations must return primal values satisfying all model constraints
    within ``feasibility_tol``.  A handle runs one solve at a time.
    """

    name: str = "abstract"
    supports_warm_start: bool = False
    feasibility_tol: float = 1e-6

    @abstractmethod
    def solve(
        self,
        model: MilpModel,
        rel_gap: float = 0.0025,
        time_limit: float | None = None,
    ) -> SolveResult:
        ...


class _Builder:
    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[int] = []
        self.var_names: list[str] = []
        self._rows_idx: list[np.ndarray] = []
        self._rows_coef: list[np.ndarray] = []
        self.row_lb: list[float] = []
        self.row_ub: list[float] = []
        self.row_names: list[str] = []
        self.groups: dict = {}

    def vars(self, name, lo, hi, n, integer=False) -> np.ndarray:
        start = len(self.lb)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
        self.lb.extend(lo.tolist())
        self.ub.extend(hi.tolist())
        self.integer.extend([1 if integer else 0] * n)
        self.var_names.extend(f"{name}_{k}" for k in range(n))
        return np.arange(start, start + n)

    def row(self, idx, coef, lo, hi, name) -> None:
        self._rows_idx.append(np.asarray(idx, dtype=int))
        self._rows_coef.append(np.asarray(coef, dtype=float))
        self.row_lb.append(lo)
        self.row_ub.append(hi)
        self.row_names.append(name)

    def build(self, objective: dict[int, float] | np.ndarray) -> MilpModel:
        n = len(self.lb)
        c = np.zeros(n)
        if isinstance(objective, dict):
            for j, v in objective.items():
                c[j] = v
        else:
            c[: len(objective)] = objective
        counts = np.array([len(ix) for ix in self._rows_idx])
        rows = np.repeat(np.arange(len(counts)), counts)
        cols = np.concatenate(self._rows_idx) if self._rows_idx else np.zeros(0, dtype=int)
        data = np.concatenate(self._rows_coef) if self._rows_coef else np.zeros(0)
        a = sp.csr_matrix((data, (rows, cols)), shape=(len(counts), n))
        return MilpModel(
            c=c,
            lb=np.asarray(self.lb),
            ub=np.asarray(self.ub),
            integrality=np.asarray(self.integer),
            a=a,
            row_lb=np.asarray(self.row_lb),
            row_ub=np.asarray(self.row_ub),
            groups=self.groups,
            row_names=self.row_names,
            var_names=self.var_names,
        )


def _d_array(grid: Grid, d) -> np.ndarray:
    dv = d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)
    if dv.shape != (grid.n_bus,):
        raise ValueError(f"load vector has shape {dv.shape}, expected ({grid.n_bus},)")
    return dv


def _add_nominal(b: _Builder, grid: Grid, dv: np.ndarray, k0b: np.ndarray,
                 k0d: np.ndarray) -> np.ndarray:
    g = b.vars("g", grid.g_min, grid.g_max, grid.n_gen)
    b.groups["g"] = g
    total = float(dv.sum())
    b.row(g, np.ones(grid.n_gen), total, total, "balance")
    cap = grid.line_capacity
    for l in range(grid.n_line):
        b.row(g, k0b[l], k0d[l] - cap[l], k0d[l] + cap[l], f"flow_{l}")
    return g


def _add_cost_epigraph(b: _Builder, grid: Grid, g: np.ndarray) -> np.ndarray:
    cost = b.vars("cost", -np.inf, np.inf, grid.n_gen)
    b.groups["cost"] = cost
    for i in range(grid.n_gen):
        for k, (slope, intercept) in enumerate(grid.cost_segments(i)):
            b.row([cost[i], g[i]], [1.0, -slope], intercept, np.inf, f"cost_{i}_{k}")
    return cost


def _add_apr_block(b: _Builder, grid: Grid, g: np.ndarray, dv: np.ndarray, s: int) -> None:
    """Response variables and linearized saturation logic for contingency s.

    Adds g_s (bounded by operating limits, zero for the failed unit), the
    saturation binaries x_s, the signal n_s, and the balance row on g_s.
    """
    j = grid.gen_index(s)
    gmax = grid.g_max.copy()
    lo = np.zeros(grid.n_gen)
    lo[j] = 0.0
    hi = gmax.copy()
    hi[j] = 0.0
    gs = b.vars(f"gs{s}", lo, hi, grid.n_gen)
    ns = b.vars(f"ns{s}", 0.0, 1.0, 1)
    xs = np.full(grid.n_gen, -1, dtype=int)
    live = [i for i in range(grid.n_gen) if i != j]
    xs_live = b.vars(f"xs{s}", 0.0, 1.0, len(live), integer=True)
    xs[live] = xs_live
    b.groups[("gs", s)] = gs
    b.groups[("ns", s)] = int(ns[0])
    b.groups[("xs", s)] = xs
    rbar = grid.response_limit
    n = int(ns[0])
    for i in live:
        x = xs[i]
        # |gs_i - g_i - rbar_i * n| <= gmax_i (1 - x_i)
        b.row([gs[i], g[i], n, x], [1.0, -1.0, -rbar[i], gmax[i]],
              -np.inf, gmax[i], f"apr_dev_up_{s}_{i}")
        b.row([gs[i], g[i], n, x], [1.0, -1.0, -rbar[i], -gmax[i]],
              -gmax[i], np.inf, f"apr_dev_lo_{s}_{i}")
        # g_i + rbar_i * n >= gmax_i (1 - x_i)
        b.row([g[i], n, x], [1.0, rbar[i], gmax[i]], gmax[i], np.inf, f"apr_sig_{s}_{i}")
        # gs_i >= gmax_i (1 - x_i)
        b.row([gs[i], x], [1.0, gmax[i]], gmax[i], np.inf, f"apr_sat_{s}_{i}")
    total = float(dv.sum())
    b.row(gs, np.ones(grid.n_gen), total, total, f"balance_gs_{s}")


def _add_flow_rows(b: _Builder, grid: Grid, idx: np.ndarray, k0b: np.ndarray,
                   k0d: np.ndarray, tag: str) -> None:
    cap = grid.line_capacity
    for l in range(grid.n_line):
        b.row(idx, k0b[l], k0d[l] - cap[l], k0d[l] + cap[l], f"flow_{tag}_{l}")


def build_extensive(grid: Grid, d, ptdf: PtdfModel | None = None) -> MilpModel:
    """Monolithic model: every contingency carries its full response block."""
    dv = _d_array(grid, d)
    ptdf = ptdf or build_ptdf(grid)
    k0b = ptdf.k0 @ grid.gen_incidence()
    k0d = ptdf.k0 @ dv
    b = _Builder()
    g = _add_nominal(b, grid, dv, k0b, k0d)
    cost = _add_cost_epigraph(b, grid, g)
    for s in grid.contingencies:
        _add_apr_block(b, grid, g, dv, s)
        _add_flow_rows(b, grid, b.groups[("gs", s)], k0b, k0d, f"gs{s}")
    return b.build({int(j): 1.0 for j in cost})


def _add_master_core(b: _Builder, grid: Grid, dv: np.ndarray, cuts: CutSet,
                     k0b: np.ndarray, k0d: np.ndarray, fc) -> np.ndarray:
    """Constraints shared by the cost master and the recovery master."""
    g = _add_nominal(b, grid, dv, k0b, k0d)
    total = float(dv.sum())
    rbar = grid.response_limit
    for s in grid.contingencies:
        j = grid.gen_index(s)
        hi = grid.g_max.copy()
        hi[j] = 0.0
        gp = b.vars(f"gp{s}", 0.0, hi, grid.n_gen)
        b.groups[("gp", s)] = gp
        b.row(gp, np.ones(grid.n_gen), total, total, f"balance_gp_{s}")
        for i in range(grid.n_gen):
            b.row([gp[i], g[i]], [1.0, -1.0], -np.inf, rbar[i], f"ramp_{s}_{i}")
    for s in sorted(cuts.states):
        _add_apr_block(b, grid, g, dv, s)
    for line, s in sorted(cuts.upper_pairs):
        coef, rhs = fc.upper_row(line)
        b.row(b.groups[("gp", s)], coef, -rhs, np.inf, f"cut_up_gp_{line}_{s}")
        if s in cuts.states:
            b.row(b.groups[("gs", s)], coef, -rhs, np.inf, f"cut_up_gs_{line}_{s}")
    for line, s in sorted(cuts.lower_pairs):
        coef, rhs = fc.lower_row(line)
        b.row(b.groups[("gp", s)], coef, -rhs, np.inf, f"cut_lo_gp_{line}_{s}")
        if s in cuts.states:
            b.row(b.groups[("gs", s)], coef, -rhs, np.inf, f"cut_lo_gs_{line}_{s}")
    return g


def build_master(grid: Grid, d, cuts: CutSet, ptdf: PtdfModel | None = None) -> MilpModel:
    """Relaxed model: guess vectors for every contingency, response blocks and
    thermal rows only for the working sets."""
    dv = _d_array(grid, d)
    ptdf = ptdf or build_ptdf(grid)
    k0b = ptdf.k0 @ grid.gen_incidence()
    k0d = ptdf.k0 @ dv
    fc = flow_cuts(ptdf, grid, dv)
    b = _Builder()
    g = _add_master_core(b, grid, dv, cuts, k0b, k0d, fc)
    cost = _add_cost_epigraph(b, grid, g)
    return b.build({int(j): 1.0 for j in cost})


def build_fr_master(grid: Grid, d, cuts: CutSet, g_hat,
                    ptdf: PtdfModel | None = None) -> MilpModel:
    """Same feasible set as the master, objective = L1 distance to ``g_hat``."""
    g_hat = np.asarray(g_hat, dtype=float)
    if g_hat.shape != (grid.n_gen,):
        raise ValueError(f"g_hat has shape {g_hat.shape}, expected ({grid.n_gen},)")
    dv = _d_array(grid, d)
    ptdf = ptdf or build_ptdf(grid)
    k0b = ptdf.k0 @ grid.gen_incidence()
    k0d = ptdf.k0 @ dv
    fc = flow_cuts(ptdf, grid, dv)
    b = _Builder()
    g = _add_master_core(b, grid, dv, cuts, k0b, k0d, fc)
    dev = b.vars("dev", 0.0, np.inf, grid.n_gen)
    b.groups["abs"] = dev
    for i in range(grid.n_gen):
        b.row([dev[i], g[i]], [1.0, -1.0], -g_hat[i], np.inf, f"dev_pos_{i}")
        b.row([dev[i], g[i]], [1.0, 1.0], g_hat[i], np.inf, f"dev_neg_{i}")
    return b.build({int(j): 1.0 for j in dev})
