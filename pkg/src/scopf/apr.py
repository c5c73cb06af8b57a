"""Automatic primary response: the contingency oracle.

Under a generator outage every surviving unit moves from its nominal output
g_i by a common signal n in [0, 1] scaled by its response limit gamma_i *
cap_i, clipped to [0, max_i].  For a fixed nominal dispatch the total output
is continuous and nondecreasing in n, so the balancing signal is found by
bisection.  All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import FlowCuts, Grid, LoadVector

BISECT_MAX_ITER = 60


@dataclass(frozen=True)
class ContingencyState:
    """Post-contingency operating point for one generator outage.

    ``x`` marks units still on the linear response (1) versus saturated at
    their operating limit (0).  ``residual`` is the absolute MW imbalance left
    when no signal in [0, 1] balances demand; zero on balanced states.
    """

    s: int                 # failed generator id
    n: float               # global signal in [0, 1]
    g: np.ndarray          # (n_gen,) MW, g[s_index] == 0
    x: np.ndarray          # (n_gen,) 0/1 indicator
    residual: float = 0.0


@dataclass(frozen=True)
class ViolationReport:
    """Thermal-limit violations of a family of contingency states."""

    tau_pos: dict[int, np.ndarray]   # per contingency id, (n_line,) MW >= 0
    tau_neg: dict[int, np.ndarray]
    phi: float                       # worst single-line violation (MW)
    s_phi: int | None                # contingency attaining phi (None if phi == 0)
    worst_line: dict[int, int]       # per contingency, line index of its worst violation


def _load_array(d) -> np.ndarray:
    return d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)


def apr_response(grid: Grid, g: np.ndarray, n: float, s: int) -> ContingencyState:
    """Dispatch after the outage of generator ``s`` at signal ``n``.

    g_i -> max(0, min(g_i + n * gamma_i * cap_i, max_i)) for survivors, 0 for
    the failed unit.  Saturated units (including exact ties) get x_i = 0.
    """
    idx = grid.gen_index(s)
    raw = g + n * grid.response_limit
    gs = np.clip(raw, 0.0, grid.g_max)
    x = (raw < grid.g_max).astype(float)
    gs[idx] = 0.0
    x[idx] = 0.0
    return ContingencyState(s=s, n=float(n), g=gs, x=x)


def response_total(grid: Grid, g: np.ndarray, n, s: int):
    """Total surviving output at signal n; vectorized over n."""
    idx = grid.gen_index(s)
    n = np.asarray(n, dtype=float)
    raw = g[None, :] + n.reshape(-1, 1) * grid.response_limit[None, :]
    gs = np.clip(raw, 0.0, grid.g_max)
    gs[:, idx] = 0.0
    total = gs.sum(axis=1)
    return total if total.size > 1 else float(total[0])


def bisect_balance(
    grid: Grid, g: np.ndarray, s: int, d, tol: float | None = None
) -> ContingencyState:
    """Find the signal balancing total output with total demand.

    Total function: when no signal in [0, 1] reaches balance the nearest
    endpoint is returned and ``residual`` reports the remaining |imbalance|
    (callers probing infeasible dispatch predictions rely on this).
    """
    target = float(_load_array(d).sum())
    if tol is None:
        tol = 1e-6 * max(abs(target), 1.0)
    lo, hi = 0.0, 1.0
    t_lo = response_total(grid, g, lo, s)
    if t_lo >= target:
        state = apr_response(grid, g, 0.0, s)
        return ContingencyState(s=s, n=0.0, g=state.g, x=state.x,
                                residual=abs(t_lo - target))
    t_hi = response_total(grid, g, hi, s)
    if t_hi < target - tol:
        state = apr_response(grid, g, 1.0, s)
        return ContingencyState(s=s, n=1.0, g=state.g, x=state.x,
                                residual=target - t_hi)
    n = hi
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        t_mid = response_total(grid, g, mid, s)
        if abs(t_mid - target) <= tol:
            n = mid
            break
        if t_mid < target:
            lo = mid
        else:
            hi = mid
        n = hi
    state = apr_response(grid, g, n, s)
    return ContingencyState(
        s=s, n=n, g=state.g, x=state.x,
        residual=abs(float(state.g.sum()) - target),
    )


def scan_violations(states: Sequence[ContingencyState], cuts: FlowCuts) -> ViolationReport:
    """Line-limit violations of each contingency state, and the worst one.

    Ties on the worst violation resolve to the lowest failed-generator id so
    repeated scans of the same states are reproducible.
    """
    tau_pos: dict[int, np.ndarray] = {}
    tau_neg: dict[int, np.ndarray] = {}
    worst_line: dict[int, int] = {}
    phi = 0.0
    s_phi: int | None = None
    for state in sorted(states, key=lambda st: st.s):
        upper, lower = cuts.slacks(state.g)
        tp = np.maximum(0.0, -upper)
        tn = np.maximum(0.0, -lower)
        tau_pos[state.s] = tp
        tau_neg[state.s] = tn
        both = np.maximum(tp, tn)
        worst_line[state.s] = int(np.argmax(both))
        peak = float(both.max()) if both.size else 0.0
        if peak > phi:
            phi = peak
            s_phi = state.s
    return ViolationReport(tau_pos=tau_pos, tau_neg=tau_neg, phi=phi,
                           s_phi=s_phi, worst_line=worst_line)
