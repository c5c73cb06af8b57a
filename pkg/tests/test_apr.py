import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopf.apr import apr_response, bisect_balance, response_total, scan_violations
from scopf.grid import build_ptdf, flow_cuts, parse_grid

from .gridgen import random_toy_grid
from .oracles import balance_signal_brentq, response_clip


def two_gen_grid(gmax1=250.0, cap1=250.0, gamma1=0.6):
    """One contingency-prone pair on a two-bus link; gen 2 is the outage."""
    doc = {
        "name": "pair",
        "buses": [{"id": 1, "load": 0.0}, {"id": 2, "load": 200.0}],
        "lines": [{"from": 1, "to": 2, "susceptance": 10.0, "capacity": 1000.0}],
        "generators": [
            {"id": 1, "bus": 1, "max": gmax1, "capacity": cap1, "gamma": gamma1,
             "cost": [[0.0, 0.0], [gmax1, 10.0 * gmax1]]},
            {"id": 2, "bus": 2, "max": 150.0, "capacity": 150.0, "gamma": 0.5,
             "cost": [[0.0, 0.0], [150.0, 3000.0]]},
        ],
        "contingencies": [2],
    }
    return parse_grid(json.dumps(doc))


class TestResponse:
    def test_zero_signal_identity(self):
        grid = two_gen_grid()
        g = np.array([100.0, 100.0])
        st_ = apr_response(grid, g, 0.0, 2)
        np.testing.assert_allclose(st_.g, [100.0, 0.0])

    def test_unsaturated_linear(self):
        # response limit 0.6 * 250 = 150; 100 + (2/3) * 150 = 200 < 250
        grid = two_gen_grid()
        st_ = apr_response(grid, np.array([100.0, 100.0]), 2 / 3, 2)
        assert st_.g[0] == pytest.approx(200.0)
        assert st_.x[0] == 1.0

    def test_saturation_at_limit(self):
        grid = two_gen_grid(gmax1=180.0, cap1=250.0)
        st_ = apr_response(grid, np.array([100.0, 100.0]), 1.0, 2)
        assert st_.g[0] == pytest.approx(180.0)
        assert st_.x[0] == 0.0

    def test_exact_tie_counts_as_saturated(self):
        grid = two_gen_grid(gmax1=250.0)
        st_ = apr_response(grid, np.array([100.0, 0.0]), 1.0, 2)  # 100 + 150 == 250
        assert st_.g[0] == pytest.approx(250.0)
        assert st_.x[0] == 0.0

    def test_pure_function_bit_identical(self):
        rng = np.random.default_rng(5)
        grid = random_toy_grid(rng)
        g = rng.uniform(grid.g_min, grid.g_max)
        s = grid.contingencies[0]
        a = apr_response(grid, g, 0.371, s)
        b = apr_response(grid, g, 0.371, s)
        assert a.g.tobytes() == b.g.tobytes()
        assert a.x.tobytes() == b.x.tobytes()


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_total_response_monotone_in_signal(seed):
    rng = np.random.default_rng(seed)
    grid = random_toy_grid(rng)
    g = rng.uniform(grid.g_min, grid.g_max)
    s = grid.contingencies[int(rng.integers(len(grid.contingencies)))]
    totals = response_total(grid, g, np.linspace(0.0, 1.0, 41), s)
    assert (np.diff(totals) >= -1e-12).all()


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_response_satisfies_disjunctive_constraints(seed):
    """Substituting the response into the linearized saturation system."""
    rng = np.random.default_rng(seed)
    grid = random_toy_grid(rng)
    g = rng.uniform(grid.g_min, grid.g_max)
    s = grid.contingencies[int(rng.integers(len(grid.contingencies)))]
    n = float(rng.uniform(0.0, 1.0))
    state = apr_response(grid, g, n, s)
    j = grid.gen_index(s)
    rbar = grid.response_limit
    for i in range(grid.n_gen):
        if i == j:
            assert state.g[i] == 0.0
            continue
        x = state.x[i]
        assert x in (0.0, 1.0)
        assert abs(state.g[i] - g[i] - n * rbar[i]) <= grid.g_max[i] * (1 - x) + 1e-9
        assert g[i] + n * rbar[i] >= grid.g_max[i] * (1 - x) - 1e-9
        assert state.g[i] >= grid.g_max[i] * (1 - x) - 1e-9
        assert 0.0 <= state.g[i] <= grid.g_max[i] + 1e-12


class TestBisect:
    def test_single_generator_closed_form(self):
        grid = two_gen_grid()  # response limit 150, max 250
        st_ = bisect_balance(grid, np.array([100.0, 100.0]), 2, [0.0, 200.0])
        # residual tolerance 2e-4 MW over a 150 MW/unit-signal slope
        assert st_.n == pytest.approx(2 / 3, abs=2e-6)
        np.testing.assert_allclose(st_.g, [200.0, 0.0], atol=1e-3)
        assert st_.residual <= 1e-6 * 200.0 + 1e-12

    def test_capacity_shortfall(self):
        grid = two_gen_grid(gmax1=180.0, cap1=250.0)
        st_ = bisect_balance(grid, np.array([100.0, 100.0]), 2, [0.0, 200.0])
        assert st_.n == 1.0
        assert st_.residual == pytest.approx(20.0)

    def test_surplus_returns_zero_signal(self):
        grid = two_gen_grid()
        st_ = bisect_balance(grid, np.array([250.0, 0.0]), 2, [0.0, 200.0])
        assert st_.n == 0.0
        assert st_.residual == pytest.approx(50.0)

    @pytest.mark.parametrize("seed,points", [(0, 1_000_001)] + [(s, 100_001) for s in range(1, 5)])
    def test_matches_dense_scan(self, seed, points):
        rng = np.random.default_rng(200 + seed)
        grid = random_toy_grid(rng, max_buses=5, max_gens=5)
        g = rng.uniform(grid.g_min, grid.g_max)
        s = grid.contingencies[0]
        total = float(rng.uniform(0.8, 1.1) * g.sum())
        d = np.zeros(grid.n_bus)
        d[0] = total
        tol = 1e-6 * total
        state = bisect_balance(grid, g, s, d, tol=tol)
        ns = np.linspace(0.0, 1.0, points)
        totals = np.concatenate([
            np.atleast_1d(response_total(grid, g, chunk, s))
            for chunk in np.array_split(ns, 20)
        ])
        best = ns[np.argmin(np.abs(totals - total))]
        best_gap = np.abs(totals - total).min()
        if state.residual <= tol:
            got = response_total(grid, g, np.array([state.n]), s)
            assert abs(got - total) <= max(tol, best_gap + tol)
        else:
            # unreachable balance: the dense scan cannot do better either
            assert best_gap >= state.residual - tol
            assert state.n in (0.0, 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brentq(self, seed):
        rng = np.random.default_rng(300 + seed)
        grid = random_toy_grid(rng)
        g = rng.uniform(grid.g_min, grid.g_max)
        s = grid.contingencies[0]
        target = float(rng.uniform(0.9, 1.05) * (g.sum() - g[grid.gen_index(s)]))
        d = np.zeros(grid.n_bus)
        d[0] = target
        state = bisect_balance(grid, g, s, d)
        oracle = balance_signal_brentq(grid, g, s, target)
        if oracle is not None and state.residual <= 1e-6 * max(target, 1.0):
            got = response_clip(grid, g, state.n, s).sum()
            want = response_clip(grid, g, oracle, s).sum()
            assert got == pytest.approx(want, abs=2e-6 * max(target, 1.0))


class TestScan:
    def test_all_feasible_zero(self, case3):
        ptdf = build_ptdf(case3)
        fc = flow_cuts(ptdf, case3, case3.nominal_load)
        states = [bisect_balance(case3, np.array([80.0, 20.0]), s, case3.nominal_load)
                  for s in case3.contingencies]
        report = scan_violations(states, fc)
        assert report.phi == 0.0
        assert report.s_phi is None
        assert all(v.max() == 0.0 for v in report.tau_pos.values())

    def test_single_violation_definition(self, case3):
        ptdf = build_ptdf(case3)
        fc = flow_cuts(ptdf, case3, case3.nominal_load)
        # push everything through gen 2 to overload the 2-3 corridor
        state = apr_response(case3, np.array([0.0, 100.0]), 0.0, 1)
        up, lo = fc.slacks(state.g)
        report = scan_violations([state], fc)
        worst = max((-up).max(), (-lo).max())
        if worst > 0:
            assert report.phi == pytest.approx(worst)
            assert report.s_phi == 1
        tau = np.maximum(report.tau_pos[1], report.tau_neg[1])
        np.testing.assert_allclose(tau, np.maximum(0, np.maximum(-up, -lo)))

    def test_tie_breaks_to_lowest_id(self, case3):
        ptdf = build_ptdf(case3)
        fc = flow_cuts(ptdf, case3, case3.nominal_load)
        g = np.array([0.0, 100.0])
        s1 = apr_response(case3, g, 0.0, 1)
        fake = apr_response(case3, g, 0.0, 1)
        fake = type(fake)(s=2, n=fake.n, g=fake.g, x=fake.x)  # same violations, higher id
        report = scan_violations([s1, fake], fc)
        if report.phi > 0:
            assert report.s_phi == 1
