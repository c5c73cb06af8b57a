"""Independent reference computations used to check the implementation.

These deliberately avoid the library's PTDF/cut/bisection code paths:
flows come from the angle formulation, balancing signals from brentq,
and optima from plain enumeration.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def dc_flows_angles(grid, injection, ref_index=None):
    """Line flows by solving B theta = p and reading f = b (theta_f - theta_t)."""
    if ref_index is None:
        ref_index = grid.ref_index
    a = grid.line_incidence()
    bbus = a.T @ (grid.susceptance[:, None] * a)
    keep = [i for i in range(grid.n_bus) if i != ref_index]
    theta = np.zeros(grid.n_bus)
    theta[keep] = np.linalg.solve(bbus[np.ix_(keep, keep)], np.asarray(injection)[keep])
    return grid.susceptance * (theta[grid.line_from] - theta[grid.line_to])


def response_clip(grid, g, n, s_id):
    """The defining response formula, written independently."""
    out = np.minimum(np.maximum(g + n * grid.gamma * grid.g_cap, 0.0), grid.g_max)
    out[grid.gen_index(s_id)] = 0.0
    return out


def balance_signal_brentq(grid, g, s_id, total_load):
    """Balancing signal via brentq; None when unreachable in [0, 1]."""
    def gap(n):
        return response_clip(grid, np.asarray(g, float), n, s_id).sum() - total_load

    if gap(0.0) >= 0.0:
        return 0.0 if gap(0.0) <= 1e-9 else None
    if gap(1.0) < -1e-9:
        return None
    return brentq(gap, 0.0, 1.0, xtol=1e-13)


def secure_dispatch_feasible(grid, d, g, flow_tol=1e-6):
    """Check a dispatch against every constraint using the angle oracle."""
    d = np.asarray(d, float)
    g = np.asarray(g, float)
    if abs(g.sum() - d.sum()) > 1e-6:
        return False
    if np.any(g < grid.g_min - 1e-9) or np.any(g > grid.g_max + 1e-9):
        return False
    inj = grid.gen_incidence() @ g - d
    if np.any(np.abs(dc_flows_angles(grid, inj)) > grid.line_capacity + flow_tol):
        return False
    for s in grid.contingencies:
        n = balance_signal_brentq(grid, g, s, d.sum())
        if n is None:
            return False
        gs = response_clip(grid, g, n, s)
        inj_s = grid.gen_incidence() @ gs - d
        if np.any(np.abs(dc_flows_angles(grid, inj_s)) > grid.line_capacity + flow_tol):
            return False
    return True


def brute_force_cost(grid, d, step=1.0, secure=True, flow_tol=1e-6):
    """Minimum cost over a dispatch grid; None if no grid point is feasible.

    Enumerates all but the last generator on a `step`-MW lattice, closing the
    balance with the last one.  Exponential; only for tiny test grids.
    """
    d = np.asarray(d, float)
    total = d.sum()
    axes = [np.arange(grid.g_min[i], grid.g_max[i] + step / 2, step)
            for i in range(grid.n_gen - 1)]
    best = None
    best_g = None
    grids = np.meshgrid(*axes, indexing="ij") if axes else []
    combos = (np.stack([g.ravel() for g in grids], axis=1)
              if axes else np.zeros((1, 0)))
    for head in combos:
        tail = total - head.sum()
        g = np.append(head, tail)
        if tail < grid.g_min[-1] - 1e-9 or tail > grid.g_max[-1] + 1e-9:
            continue
        if secure:
            if not secure_dispatch_feasible(grid, d, g, flow_tol):
                continue
        else:
            inj = grid.gen_incidence() @ g - d
            if np.any(np.abs(dc_flows_angles(grid, inj)) > grid.line_capacity + flow_tol):
                continue
        cost = grid.cost(g)
        if best is None or cost < best:
            best, best_g = cost, g
    return (best, best_g) if best is not None else (None, None)
