import json

import numpy as np
import pytest

from scopf.ccga import CcgaConfig, run_ccga
from scopf.formulations import CutSet, build_extensive, build_fr_master, build_master
from scopf.grid import build_ptdf, parse_grid

from .gridgen import random_toy_doc, random_toy_grid
from .oracles import brute_force_cost

TIGHT = 1e-9


def solve(backend, model, rel_gap=TIGHT):
    res = backend.solve(model, rel_gap=rel_gap)
    assert res.status == "optimal", res.status
    assert model.check(res.x) <= 1e-6
    return res


class TestExtensive:
    def test_binary_count(self, case3):
        model = build_extensive(case3, case3.nominal_load)
        # one saturation binary per surviving unit per contingency
        assert model.n_binaries == 2

    def test_empty_contingency_set_is_plain_opf(self, backend):
        rng = np.random.default_rng(42)
        doc = random_toy_doc(rng)
        while len(doc["generators"]) != 2:
            doc = random_toy_doc(rng)
        doc["contingencies"] = []
        grid = parse_grid(json.dumps(doc))
        d = grid.nominal_load
        model = build_extensive(grid, d)
        assert model.n_binaries == 0
        res = solve(backend, model)
        cost, _ = brute_force_cost(grid, d, step=1.0, secure=False)
        assert cost is not None
        assert res.objective <= cost + 1e-6
        max_slope = max(s for i in range(grid.n_gen) for s, _ in grid.cost_segments(i))
        assert cost - res.objective <= 1.0 * grid.n_gen * max_slope

    def test_matches_brute_force_with_contingency(self, case3, backend):
        d = case3.nominal_load
        res = solve(backend, build_extensive(case3, d))
        cost, _ = brute_force_cost(case3, d, step=1.0, secure=True)
        assert cost is not None
        assert res.objective <= cost + 1e-6
        max_slope = max(s for i in range(case3.n_gen) for s, _ in case3.cost_segments(i))
        assert cost - res.objective <= 1.0 * case3.n_gen * max_slope

    def test_epigraph_matches_direct_cost(self, case3, backend):
        model = build_extensive(case3, case3.nominal_load)
        res = solve(backend, model)
        g = model.decode(res.x).g
        assert res.objective == pytest.approx(case3.cost(g), abs=1e-6)

    def test_decoded_solution_shapes(self, case3, backend):
        model = build_extensive(case3, case3.nominal_load)
        res = solve(backend, model)
        sol = model.decode(res.x)
        assert set(sol.gs) == {1, 2}
        for s in (1, 2):
            assert sol.gs[s][case3.gen_index(s)] == pytest.approx(0.0, abs=1e-9)
            assert 0.0 <= sol.ns[s] <= 1.0


class TestMaster:
    def test_empty_cut_set_has_no_binaries(self, case3):
        model = build_master(case3, case3.nominal_load, CutSet())
        assert model.n_binaries == 0

    def test_one_block_binary_count(self, case3):
        model = build_master(case3, case3.nominal_load, CutSet(states={1}))
        assert model.n_binaries == case3.n_gen - 1

    def test_lower_bound_ordering(self, backend):
        """Masters with nested working sets bracket the extensive optimum."""
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 3:
            grid = random_toy_grid(rng)
            d = grid.nominal_load
            ext = backend.solve(build_extensive(grid, d), rel_gap=TIGHT)
            if ext.status != "optimal":
                continue
            small = CutSet()
            s0 = grid.contingencies[0]
            line = int(rng.integers(grid.n_line))
            big = CutSet(states={s0}, upper_pairs={(line, s0)}, lower_pairs={(line, s0)})
            lo = solve(backend, build_master(grid, d, small)).objective
            hi = solve(backend, build_master(grid, d, big)).objective
            assert lo <= hi + 1e-6
            assert hi <= ext.fun if hasattr(ext, "fun") else True
            assert hi <= ext.objective + 1e-6
            checked += 1

    def test_respects_response_capability(self, case3, backend):
        # the guess variables force enough headroom for every outage
        res = solve(backend, build_master(case3, case3.nominal_load, CutSet()))
        g = build_master(case3, case3.nominal_load, CutSet()).decode(res.x).g
        # losing unit 1 leaves unit 2: needs g2 + response_limit >= 100
        assert g[1] + case3.response_limit[1] >= 100.0 - 1e-6


class TestFrMaster:
    def test_projection_of_feasible_point_is_identity(self, case3, backend):
        cfg = CcgaConfig(epsilon=1e-3, rel_gap=TIGHT)
        ref = run_ccga(case3, case3.nominal_load, cfg, backend)
        model = build_fr_master(case3, case3.nominal_load, ref.cuts, ref.g)
        res = solve(backend, model)
        assert res.objective == pytest.approx(0.0, abs=1e-5)
        np.testing.assert_allclose(model.decode(res.x).g, ref.g, atol=1e-4)

    def test_box_violation_lower_bounds_distance(self, case3, backend):
        g_hat = case3.g_max.astype(float).copy()
        g_hat[0] += 5.0
        total = case3.nominal_load.sum()
        # keep the target reachable: total load below sum of max
        assert total < case3.g_max.sum()
        model = build_fr_master(case3, case3.nominal_load, CutSet(), g_hat)
        res = solve(backend, model)
        assert res.objective >= 5.0 - 1e-6

    def test_distance_is_l1(self, case3, backend):
        g_hat = np.array([10.0, 10.0])
        model = build_fr_master(case3, case3.nominal_load, CutSet(), g_hat)
        res = solve(backend, model)
        g = model.decode(res.x).g
        assert res.objective == pytest.approx(np.abs(g - g_hat).sum(), abs=1e-6)


class TestLpExport:
    def test_contains_sections_and_binaries(self, case3):
        model = build_extensive(case3, case3.nominal_load)
        text = model.to_lp()
        for token in ("Minimize", "Subject To", "Bounds", "Binary", "End"):
            assert token in text
        assert "xs1_0" in text or "xs1_1" in text
