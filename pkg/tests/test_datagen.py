import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopf.apr import bisect_balance, scan_violations
from scopf.ccga import CcgaConfig
from scopf.datagen import (
    generate_dataset,
    generate_loads,
    label_instances,
    load_dataset,
    load_scaling,
    save_dataset,
    split_dataset,
)
from scopf.grid import build_ptdf, flow_cuts, load_vector

CFG = CcgaConfig(epsilon=1e-3, rel_gap=1e-6)


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGenerateLoads:
    def test_scaling_starts_at_82_percent(self):
        assert load_scaling(0) == pytest.approx(0.82)
        assert load_scaling(1000) == pytest.approx(0.84)

    def test_deterministic(self, case3):
        a = generate_loads(case3, 20, seed=5)
        b = generate_loads(case3, 20, seed=5)
        assert len(a) == len(b) == 20
        for x, y in zip(a, b):
            assert x.d.tobytes() == y.d.tobytes()

    def test_multiplier_support(self, case3):
        loads = generate_loads(case3, 400, seed=1)
        loaded = case3.nominal_load > 0
        mult = np.concatenate([
            ld.d[loaded] / (case3.nominal_load[loaded] * load_scaling(t))
            for t, ld in enumerate(loads)
        ])
        assert mult.min() >= 0.995
        assert mult.max() <= 1.005

    def test_stops_at_capacity(self, case3):
        # scaling reaches capacity 250/100 = 2.5 at t = (2.5-0.82)/2e-5 = 84000
        loads = generate_loads(case3, 90_000, seed=0)
        assert len(loads) < 90_000
        cap = case3.g_max.sum()
        assert all(ld.total <= cap for ld in loads)


class TestLabeling:
    def test_all_feasible_batch(self, case3, backend):
        loads = generate_loads(case3, 8, seed=2)
        ds = label_instances(case3, loads, CFG, backend, seed=2)
        assert len(ds) == 8
        assert ds.excluded == []
        assert ds.fingerprint == case3.fingerprint()

    def test_overscaled_load_excluded(self, case3, backend):
        loads = [load_vector(case3, case3.nominal_load),
                 load_vector(case3, case3.nominal_load * 10)]
        ds = label_instances(case3, loads, CFG, backend)
        assert len(ds) == 1
        assert ds.excluded[0]["reason"] == "capacity"

    def test_master_infeasible_excluded(self, case3, backend):
        # within capacity (250) but beyond the secure-response capability
        loads = [load_vector(case3, case3.nominal_load * 2.3)]
        ds = label_instances(case3, loads, CFG, backend)
        assert len(ds) == 0
        assert ds.excluded[0]["reason"] == "master_infeasible"

    def test_labels_pass_reaudit(self, case3, backend):
        ds = generate_dataset(case3, 6, seed=9, cfg=CFG, backend=backend)
        ptdf = build_ptdf(case3)
        for rec in ds.records:
            fc = flow_cuts(ptdf, case3, rec.d)
            states = [bisect_balance(case3, rec.g, s, rec.d) for s in case3.contingencies]
            assert scan_violations(states, fc).phi <= CFG.epsilon
            assert abs(rec.g.sum() - rec.d.sum()) <= 1e-5

    def test_parallel_labeling_matches_sequential(self, case3, backend):
        loads = generate_loads(case3, 6, seed=4)
        seq = label_instances(case3, loads, CFG, backend, seed=4)
        par = label_instances(case3, loads, CFG, backend, seed=4, workers=2)
        assert len(seq) == len(par)
        for a, b in zip(seq.records, par.records):
            assert a.index == b.index
            assert a.g.tobytes() == b.g.tobytes()


class TestSplit:
    def test_seventy_thirty(self, case3, backend):
        ds = generate_dataset(case3, 10, seed=3, cfg=CFG, backend=backend)
        ds.records = ds.records * 10  # 100 records
        train, test = split_dataset(ds, 0.7, seed=0)
        assert len(train) == 70 and len(test) == 30

    def test_floor_rule(self, case3, backend):
        ds = generate_dataset(case3, 10, seed=3, cfg=CFG, backend=backend)
        train, test = split_dataset(ds, 0.999, seed=0)
        assert len(train) == 9 and len(test) == 1

    def test_partition_is_exact(self, case3, backend):
        ds = generate_dataset(case3, 9, seed=6, cfg=CFG, backend=backend)
        train, test = split_dataset(ds, 0.5, seed=11)
        got = sorted(r.index for r in train.records + test.records)
        assert got == [r.index for r in ds.records]

    @given(st.integers(0, 1000))
    @settings(max_examples=10, deadline=None)
    def test_split_deterministic(self, seed):
        import copy

        from scopf.datagen import Dataset, DatasetRecord

        records = [
            DatasetRecord(index=i, scale=1.0, d=np.zeros(1), g=np.zeros(1),
                          ns=np.zeros(1), gs=np.zeros((1, 1)), xs=np.zeros((1, 1)),
                          objective=0.0, phi=0.0, iterations=1, status="optimal")
            for i in range(23)
        ]
        ds = Dataset(fingerprint="x", grid_name="t", seed=0, params={},
                     contingencies=(1,), records=records)
        a1, b1 = split_dataset(ds, 0.6, seed)
        a2, b2 = split_dataset(copy.deepcopy(ds), 0.6, seed)
        assert [r.index for r in a1.records] == [r.index for r in a2.records]
        assert [r.index for r in b1.records] == [r.index for r in b2.records]


class TestPersistence:
    def test_roundtrip(self, case3, backend, tmp_path):
        ds = generate_dataset(case3, 5, seed=8, cfg=CFG, backend=backend)
        save_dataset(ds, tmp_path / "ds.jsonl")
        back = load_dataset(tmp_path / "ds.jsonl")
        assert back.fingerprint == ds.fingerprint
        assert len(back) == len(ds)
        for a, b in zip(ds.records, back.records):
            for name in ("d", "g", "ns", "gs", "xs"):
                assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
            assert a.objective == b.objective

    def test_bytes_deterministic(self, case3, backend, tmp_path):
        for run in ("a", "b"):
            (tmp_path / run).mkdir()
            ds = generate_dataset(case3, 5, seed=8, cfg=CFG, backend=backend)
            save_dataset(ds, tmp_path / run / "ds.jsonl")
        assert file_hash(tmp_path / "a/ds.jsonl") == file_hash(tmp_path / "b/ds.jsonl")
        assert file_hash(tmp_path / "a/ds.bin") == file_hash(tmp_path / "b/ds.bin")

    def test_rejects_other_files(self, tmp_path):
        p = tmp_path / "junk.jsonl"
        p.write_text('{"format": "other"}\n')
        with pytest.raises(ValueError):
            load_dataset(p)
