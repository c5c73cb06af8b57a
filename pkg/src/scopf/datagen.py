"""Instance generation, labeling and dataset persistence.

Instance t scales the nominal bus loads by (0.82 + 2e-5 t) with i.i.d.
uniform(-0.5%, +0.5%) per-bus noise on top.  Labels come from the exact
generation loop; instances it cannot certify are excluded and recorded.

Datasets persist as a self-describing JSON-lines file plus a raw float64
little-endian binary sidecar for the dense vectors.  No wall-clock data is
written, so identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ccga import BackendFailureError, CcgaConfig, CcgaResult, MasterInfeasibleError, run_ccga
from .formulations import SolverBackend
from .grid import Grid, LoadVector, load_vector

FORMAT_TAG = "scopf-dataset/v1"

SCALE_BASE = 0.82
SCALE_STEP = 2e-5
NOISE_HALF_WIDTH = 0.005


def load_scaling(t: int) -> float:
    """Deterministic load-scaling component of instance t."""
    return SCALE_BASE + SCALE_STEP * t


def generate_loads(grid: Grid, count: int, seed: int) -> list[LoadVector]:
    """Draw ``count`` instance loads; stops early once total load exceeds
    total operating capacity."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    cap = float(grid.g_max.sum())
    loads: list[LoadVector] = []
    for t in range(count):
        noise = rng.uniform(-NOISE_HALF_WIDTH, NOISE_HALF_WIDTH, grid.n_bus)
        d = grid.nominal_load * load_scaling(t) * (1.0 + noise)
        if d.sum() > cap:
            break
        loads.append(load_vector(grid, d))
    return loads


@dataclass(frozen=True)
class DatasetRecord:
    index: int
    scale: float
    d: np.ndarray            # (n_bus,)
    g: np.ndarray            # (n_gen,)
    ns: np.ndarray           # (n_contingencies,)
    gs: np.ndarray           # (n_contingencies, n_gen)
    xs: np.ndarray           # (n_contingencies, n_gen)
    objective: float
    phi: float
    iterations: int
    status: str


@dataclass
class Dataset:
    fingerprint: str
    grid_name: str
    seed: int
    params: dict
    contingencies: tuple[int, ...]
    records: list[DatasetRecord] = field(default_factory=list)
    excluded: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def _record_from_result(grid: Grid, index: int, load: LoadVector,
                        result: CcgaResult) -> DatasetRecord:
    ns = np.array([result.states[s].n for s in grid.contingencies])
    gs = np.stack([result.states[s].g for s in grid.contingencies])
    xs = np.stack([result.states[s].x for s in grid.contingencies])
    return DatasetRecord(
        index=index,
        scale=load_scaling(index),
        d=load.d,
        g=result.g,
        ns=ns,
        gs=gs,
        xs=xs,
        objective=result.objective,
        phi=result.phi,
        iterations=result.iterations,
        status=result.status,
    )


def _label_one(grid: Grid, index: int, load: LoadVector, cfg: CcgaConfig,
               backend: SolverBackend):
    if not load.capacity_feasible:
        return index, None, {"index": index, "reason": "capacity"}
    try:
        result = run_ccga(grid, load, cfg, backend)
    except MasterInfeasibleError as exc:
        return index, None, {"index": index, "reason": "master_infeasible", "detail": str(exc)}
    except BackendFailureError as exc:
        return index, None, {"index": index, "reason": "backend_failure", "detail": str(exc)}
    if result.status != "optimal":
        return index, None, {"index": index, "reason": result.status}
    return index, _record_from_result(grid, index, load, result), None


def _label_worker(args):
    grid, index, load, cfg, backend_cls = args
    return _label_one(grid, index, load, cfg, backend_cls())


def label_instances(
    grid: Grid,
    loads: list[LoadVector],
    cfg: CcgaConfig | None = None,
    backend: SolverBackend | None = None,
    seed: int = 0,
    workers: int = 1,
) -> Dataset:
    """Label each load with its certified optimal dispatch and response states.

    Per-instance failures are recorded in ``excluded`` rather than aborting
    the batch.  With ``workers > 1`` instances are labeled by a process pool,
    each worker holding its own backend handle (the backend type must be
    constructible without arguments); records are assembled in index order
    either way.
    """
    cfg = cfg or CcgaConfig()
    if backend is None:
        from .solvers import HighsBackend

        backend = HighsBackend()
    outcomes = []
    if workers > 1:
        jobs = [(grid, t, load, cfg, type(backend)) for t, load in enumerate(loads)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_label_worker, jobs))
    else:
        for t, load in enumerate(loads):
            outcomes.append(_label_one(grid, t, load, cfg, backend))
    outcomes.sort(key=lambda o: o[0])
    ds = Dataset(
        fingerprint=grid.fingerprint(),
        grid_name=grid.name,
        seed=seed,
        params={
            "count": len(loads),
            "epsilon": cfg.epsilon,
            "rel_gap": cfg.rel_gap,
            "scale_base": SCALE_BASE,
            "scale_step": SCALE_STEP,
            "noise_half_width": NOISE_HALF_WIDTH,
        },
        contingencies=grid.contingencies,
    )
    for _, record, excluded in outcomes:
        if record is not None:
            ds.records.append(record)
        else:
            ds.excluded.append(excluded)
    return ds


def generate_dataset(grid: Grid, count: int, seed: int,
                     cfg: CcgaConfig | None = None,
                     backend: SolverBackend | None = None,
                     workers: int = 1) -> Dataset:
    """generate_loads + label_instances with a shared seed."""
    return label_instances(grid, generate_loads(grid, count, seed), cfg, backend,
                           seed=seed, workers=workers)


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint, exhaustive partition; train size floors the fraction."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset.records)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(train_fraction * n))
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())

    def subset(indices, role):
        return Dataset(
            fingerprint=dataset.fingerprint,
            grid_name=dataset.grid_name,
            seed=dataset.seed,
            params={**dataset.params,
                    "split": {"fraction": train_fraction, "seed": seed, "role": role}},
            contingencies=dataset.contingencies,
            records=[dataset.records[i] for i in indices],
            excluded=list(dataset.excluded) if role == "train" else [],
        )

    return subset(train_idx, "train"), subset(test_idx, "test")


_ARRAY_FIELDS = ("d", "g", "ns", "gs", "xs")


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``<path>`` (JSON lines) and ``<path stem>.bin`` (array sidecar)."""
    path = Path(path)
    sidecar = path.with_suffix(".bin")
    offset = 0
    blobs: list[bytes] = []
    lines: list[str] = []
    header = {
        "format": FORMAT_TAG,
        "fingerprint": dataset.fingerprint,
        "grid_name": dataset.grid_name,
        "seed": dataset.seed,
        "params": dataset.params,
        "contingencies": list(dataset.contingencies),
        "n_records": len(dataset.records),
        "n_excluded": len(dataset.excluded),
        "sidecar": sidecar.name,
    }
    lines.append(json.dumps(header, sort_keys=True, separators=(",", ":")))
    for rec in dataset.records:
        arrays = {}
        for name in _ARRAY_FIELDS:
            arr = np.ascontiguousarray(getattr(rec, name), dtype="<f8")
            blob = arr.tobytes()
            arrays[name] = {"offset": offset, "shape": list(arr.shape)}
            blobs.append(blob)
            offset += len(blob)
        row = {
            "index": rec.index,
            "scale": rec.scale,
            "objective": rec.objective,
            "phi": rec.phi,
            "iterations": rec.iterations,
            "status": rec.status,
            "arrays": arrays,
        }
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    for exc in dataset.excluded:
        lines.append(json.dumps({"excluded": exc}, sort_keys=True, separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar.write_bytes(b"".join(blobs))


def load_dataset(path) -> Dataset:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} file: {path}")
    raw = (path.parent / header["sidecar"]).read_bytes()
    ds = Dataset(
        fingerprint=header["fingerprint"],
        grid_name=header["grid_name"],
        seed=header["seed"],
        params=header["params"],
        contingencies=tuple(header["contingencies"]),
    )
    for line in lines[1:]:
        row = json.loads(line)
        if "excluded" in row:
            ds.excluded.append(row["excluded"])
            continue
        arrays = {}
        for name, meta in row["arrays"].items():
            shape = tuple(meta["shape"])
            n = int(np.prod(shape))
            start = meta["offset"]
            arrays[name] = np.frombuffer(
                raw, dtype="<f8", count=n, offset=start
            ).reshape(shape).copy()
        ds.records.append(DatasetRecord(
            index=row["index"],
            scale=row["scale"],
            objective=row["objective"],
            phi=row["phi"],
            iterations=row["iterations"],
            status=row["status"],
            **arrays,
        ))
    return ds
