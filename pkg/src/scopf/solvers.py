"""Reference solver backend built on scipy's HiGHS interface."""

from __future__ import annotations

import time

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .formulations import MilpModel, SolveResult, SolverBackend

_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded", 4: "failed"}


class HighsBackend(SolverBackend):
    """Exact MILP solves through scipy.optimize.milp (HiGHS, single-threaded)."""

    name = "highs"
    supports_warm_start = False
    feasibility_tol = 1e-6

    def solve(
        self,
        model: MilpModel,
        rel_gap: float = 0.0025,
        time_limit: float | None = None,
    ) -> SolveResult:
        options: dict = {"disp": False, "mip_rel_gap": rel_gap}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        t0 = time.perf_counter()
        res = milp(
            c=model.c,
            constraints=LinearConstraint(model.a, model.row_lb, model.row_ub),
            integrality=model.integrality,
            bounds=Bounds(model.lb, model.ub),
            options=options,
        )
        wall = time.perf_counter() - t0
        status = _STATUS.get(res.status, "failed")
        x = np.asarray(res.x) if res.x is not None else None
        if status == "optimal" and x is None:
            status = "failed"
        objective = float(res.fun) if res.fun is not None else None
        bound = getattr(res, "mip_dual_bound", None)
        best_bound = float(bound) if bound is not None else objective
        gap = getattr(res, "mip_gap", None)
        return SolveResult(
            status=status,
            objective=objective,
            x=x,
            best_bound=best_bound,
            gap=float(gap) if gap is not None else None,
            wall_time=wall,
        )
