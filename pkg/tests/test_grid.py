import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopf.grid import (
    CapacityLimitError,
    DisconnectedNetworkError,
    NonconvexCostError,
    SchemaError,
    build_ptdf,
    flow_cuts,
    load_vector,
    parse_grid,
)

from .gridgen import random_toy_doc, random_toy_grid
from .oracles import dc_flows_angles


def doc3():
    return {
        "name": "t",
        "ref_bus": 3,
        "buses": [{"id": 1}, {"id": 2, "load": 40.0}, {"id": 3, "load": 60.0}],
        "lines": [
            {"from": 1, "to": 2, "susceptance": 10.0, "capacity": 100.0},
            {"from": 2, "to": 3, "susceptance": 10.0, "capacity": 100.0},
            {"from": 1, "to": 3, "susceptance": 10.0, "capacity": 100.0},
        ],
        "generators": [
            {"id": 1, "bus": 1, "max": 150.0, "gamma": 0.8,
             "cost": [[0.0, 0.0], [150.0, 1500.0]]},
            {"id": 2, "bus": 2, "max": 100.0, "gamma": 0.8,
             "cost": [[0.0, 0.0], [100.0, 3000.0]]},
        ],
        "contingencies": [1, 2],
    }


class TestParse:
    def test_toy_identity(self):
        g = parse_grid(json.dumps(doc3()))
        assert (g.n_bus, g.n_line, g.n_gen) == (3, 3, 2)
        assert g.ref_bus == 3
        assert g.contingencies == (1, 2)
        np.testing.assert_allclose(g.nominal_load, [0.0, 40.0, 60.0])

    def test_case118_dimensions(self, case118):
        assert (case118.n_gen, case118.n_line, case118.n_bus) == (54, 186, 118)

    def test_capacity_violation(self):
        d = doc3()
        d["generators"][0]["capacity"] = 120.0  # below max 150
        with pytest.raises(CapacityLimitError):
            parse_grid(json.dumps(d))

    def test_min_above_max(self):
        d = doc3()
        d["generators"][1]["min"] = 200.0
        with pytest.raises(CapacityLimitError):
            parse_grid(json.dumps(d))

    def test_schema_violation(self):
        with pytest.raises(SchemaError):
            parse_grid("{\"buses\": []}")
        with pytest.raises(SchemaError):
            parse_grid("not json")

    def test_missing_ref_bus(self):
        d = doc3()
        d["ref_bus"] = 99
        with pytest.raises(SchemaError, match="ref_bus"):
            parse_grid(json.dumps(d))

    def test_default_ref_bus_is_lowest(self):
        d = doc3()
        del d["ref_bus"]
        assert parse_grid(json.dumps(d)).ref_bus == 1

    def test_disconnected(self):
        d = doc3()
        d["buses"].append({"id": 4})
        with pytest.raises(DisconnectedNetworkError):
            parse_grid(json.dumps(d))

    def test_nonconvex_cost(self):
        d = doc3()
        d["generators"][0]["cost"] = [[0.0, 0.0], [75.0, 1500.0], [150.0, 2000.0]]
        with pytest.raises(NonconvexCostError):
            parse_grid(json.dumps(d))

    def test_bad_gamma(self):
        d = doc3()
        d["generators"][0]["gamma"] = 1.5
        with pytest.raises(SchemaError, match="gamma"):
            parse_grid(json.dumps(d))

    def test_unknown_contingency(self):
        d = doc3()
        d["contingencies"] = [7]
        with pytest.raises(SchemaError, match="contingencies"):
            parse_grid(json.dumps(d))

    def test_roundtrip_fingerprint(self, case3):
        again = parse_grid(json.dumps(case3.to_dict()))
        assert again.fingerprint() == case3.fingerprint()

    def test_contingency_default_is_all_generators(self):
        d = doc3()
        del d["contingencies"]
        assert parse_grid(json.dumps(d)).contingencies == (1, 2)


class TestPtdf:
    def test_three_bus_ring_split(self, case3):
        ptdf = build_ptdf(case3)
        inj = np.array([1.0, 0.0, -1.0])
        np.testing.assert_allclose(ptdf.flows(inj), [1 / 3, 1 / 3, 2 / 3], atol=1e-12)

    def test_zero_injection(self, case3):
        ptdf = build_ptdf(case3)
        np.testing.assert_array_equal(ptdf.flows(np.zeros(3)), np.zeros(3))

    def test_reference_column_zero(self, case3):
        ptdf = build_ptdf(case3)
        np.testing.assert_array_equal(ptdf.k0[:, case3.ref_index], 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_angle_solve(self, seed):
        rng = np.random.default_rng(seed)
        grid = random_toy_grid(rng)
        ptdf = build_ptdf(grid)
        scale = np.linalg.norm(grid.line_capacity, np.inf)
        for _ in range(100):
            inj = rng.normal(0.0, 50.0, grid.n_bus)
            inj -= inj.mean()
            np.testing.assert_allclose(
                ptdf.flows(inj), dc_flows_angles(grid, inj), atol=1e-9 * scale
            )

    def test_flows_independent_of_reference(self):
        rng = np.random.default_rng(7)
        doc = random_toy_doc(rng)
        g1 = parse_grid(json.dumps(doc))
        doc["ref_bus"] = max(b["id"] for b in doc["buses"])
        g2 = parse_grid(json.dumps(doc))
        ptdf1, ptdf2 = build_ptdf(g1), build_ptdf(g2)
        assert ptdf1.ref_bus != ptdf2.ref_bus
        inj = rng.normal(0.0, 30.0, g1.n_bus)
        inj -= inj.mean()
        np.testing.assert_allclose(ptdf1.flows(inj), ptdf2.flows(inj), atol=1e-9)


class TestFlowCuts:
    def test_zero_case(self, case3):
        ptdf = build_ptdf(case3)
        fc = flow_cuts(ptdf, case3, np.zeros(3))
        up, lo = fc.slacks(np.zeros(2))
        np.testing.assert_allclose(up, case3.line_capacity)
        np.testing.assert_allclose(lo, case3.line_capacity)

    def test_interior_point_positive_rows(self, case3):
        ptdf = build_ptdf(case3)
        d = case3.nominal_load
        fc = flow_cuts(ptdf, case3, d)
        up, lo = fc.slacks(np.array([60.0, 40.0]))
        assert (up > 0).all() and (lo > 0).all()

    def test_min_row_equals_headroom(self, case3):
        rng = np.random.default_rng(0)
        ptdf = build_ptdf(case3)
        d = case3.nominal_load
        fc = flow_cuts(ptdf, case3, d)
        for _ in range(25):
            gs = rng.uniform(0.0, case3.g_max)
            inj = case3.gen_incidence() @ gs - d
            flows = dc_flows_angles(case3, inj)
            up, lo = fc.slacks(gs)
            expected = (case3.line_capacity - np.abs(flows)).min()
            assert min(up.min(), lo.min()) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(6))
    def test_violation_sets_match_angle_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        grid = random_toy_grid(rng)
        ptdf = build_ptdf(grid)
        d = grid.nominal_load * rng.uniform(0.8, 1.0)
        fc = flow_cuts(ptdf, grid, d)
        for _ in range(100):
            gs = rng.uniform(0.0, 1.5 * grid.g_max)
            up, lo = fc.slacks(gs)
            flows = dc_flows_angles(grid, grid.gen_incidence() @ gs - d)
            violated_cuts = set(np.nonzero((up < 0) | (lo < 0))[0])
            violated_flow = set(np.nonzero(np.abs(flows) > grid.line_capacity)[0])
            assert violated_cuts == violated_flow


class TestLoadVector:
    def test_capacity_flag(self, case3):
        ok = load_vector(case3, case3.nominal_load)
        assert ok.capacity_feasible and ok.total == pytest.approx(100.0)
        bad = load_vector(case3, case3.nominal_load * 10)
        assert not bad.capacity_feasible

    def test_shape_check(self, case3):
        with pytest.raises(ValueError):
            load_vector(case3, np.zeros(5))


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_cost_interpolation_matches_segments(seed):
    rng = np.random.default_rng(seed)
    grid = random_toy_grid(rng)
    g = rng.uniform(grid.g_min, grid.g_max)
    direct = grid.cost(g)
    by_segments = 0.0
    for i in range(grid.n_gen):
        best = -np.inf
        for slope, intercept in grid.cost_segments(i):
            best = max(best, slope * g[i] + intercept)
        by_segments += best
    assert direct == pytest.approx(by_segments, rel=1e-9, abs=1e-9)
