"""Network data model: grid documents, validation, PTDF machinery and flow cuts.

The grid document is a JSON object with keys ``buses``, ``lines``,
``generators``, ``ref_bus`` and ``contingencies`` (units: MW for power,
per-unit for susceptance).  See README for the full schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

import jsonschema


class GridError(ValueError):
    """Base class for grid-document problems."""


class SchemaError(GridError):
    """Document does not conform to the grid JSON schema."""


class DisconnectedNetworkError(GridError):
    """The line set does not connect all buses."""


class NonconvexCostError(GridError):
    """Cost breakpoints are not increasing or slopes decrease."""


class CapacityLimitError(GridError):
    """Generator limits violate min <= max <= capacity."""


_GRID_SCHEMA = {
    "type": "object",
    "required": ["buses", "lines", "generators"],
    "properties": {
        "name": {"type": "string"},
        "ref_bus": {"type": "integer"},
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {
                    "id": {"type": "integer"},
                    "load": {"type": "number"},
                },
            },
        },
        "lines": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["from", "to", "susceptance", "capacity"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "susceptance": {"type": "number", "exclusiveMinimum": 0},
                    "capacity": {"type": "number"},
                },
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "bus", "max", "gamma", "cost"],
                "properties": {
                    "id": {"type": "integer"},
                    "bus": {"type": "integer"},
                    "min": {"type": "number", "minimum": 0},
                    "max": {"type": "number"},
                    "capacity": {"type": "number"},
                    "gamma": {"type": "number"},
                    "cost": {
                        "type": "array",
                        "minItems": 2,
                        "items": {
                            "type": "array",
                            "minItems": 2,
                            "maxItems": 2,
                            "items": {"type": "number"},
                        },
                    },
                },
            },
        },
        "contingencies": {"type": "array", "items": {"type": "integer"}},
    },
}


@dataclass(frozen=True)
class Grid:
    """Validated, immutable network description.

    All arrays are indexed positionally; ``bus_ids``/``gen_ids`` map positions
    back to document identifiers.  Loads are the nominal per-bus net loads from
    the document; instance loads are built separately (see :class:`LoadVector`).
    """

    name: str
    bus_ids: tuple[int, ...]
    ref_bus: int
    nominal_load: np.ndarray          # (n_bus,) MW
    line_from: np.ndarray             # (n_line,) bus index
    line_to: np.ndarray               # (n_line,) bus index
    susceptance: np.ndarray           # (n_line,) p.u.
    line_capacity: np.ndarray         # (n_line,) MW
    gen_ids: tuple[int, ...]
    gen_bus: np.ndarray               # (n_gen,) bus index
    g_min: np.ndarray                 # (n_gen,) MW
    g_max: np.ndarray                 # (n_gen,) MW, upper operating limit
    g_cap: np.ndarray                 # (n_gen,) MW, capacity
    gamma: np.ndarray                 # (n_gen,) response parameter in (0, 1]
    cost_points: tuple[np.ndarray, ...]  # per gen, (k+1, 2) [MW, $/h] breakpoints
    contingencies: tuple[int, ...]    # generator ids

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_line(self) -> int:
        return len(self.line_from)

    @property
    def n_gen(self) -> int:
        return len(self.gen_ids)

    @property
    def ref_index(self) -> int:
        return self.bus_ids.index(self.ref_bus)

    @property
    def response_limit(self) -> np.ndarray:
        """Per-generator primary response limit gamma * capacity (MW)."""
        return self.gamma * self.g_cap

    def gen_index(self, gen_id: int) -> int:
        return self.gen_ids.index(gen_id)

    def line_incidence(self) -> np.ndarray:
        """Line-bus incidence (n_line x n_bus): +1 at from bus, -1 at to bus."""
        a = np.zeros((self.n_line, self.n_bus))
        a[np.arange(self.n_line), self.line_from] = 1.0
        a[np.arange(self.n_line), self.line_to] = -1.0
        return a

    def gen_incidence(self) -> np.ndarray:
        """Generator-bus incidence (n_bus x n_gen)."""
        b = np.zeros((self.n_bus, self.n_gen))
        b[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return b

    def cost_segments(self, i: int) -> list[tuple[float, float]]:
        """(slope, intercept) of each cost segment of generator i."""
        pts = self.cost_points[i]
        segs = []
        for k in range(len(pts) - 1):
            (x0, y0), (x1, y1) = pts[k], pts[k + 1]
            slope = (y1 - y0) / (x1 - x0)
            segs.append((slope, y0 - slope * x0))
        return segs

    def cost(self, g: np.ndarray) -> float:
        """Total generation cost h(g) in $/h, g within operating limits."""
        total = 0.0
        for i in range(self.n_gen):
            pts = self.cost_points[i]
            total += float(np.interp(g[i], pts[:, 0], pts[:, 1]))
        return total

    def to_dict(self) -> dict:
        """Canonical document form (used for round-trips and fingerprints)."""
        return {
            "name": self.name,
            "ref_bus": self.ref_bus,
            "buses": [
                {"id": b, "load": float(self.nominal_load[i])}
                for i, b in enumerate(self.bus_ids)
            ],
            "lines": [
                {
                    "from": self.bus_ids[self.line_from[k]],
                    "to": self.bus_ids[self.line_to[k]],
                    "susceptance": float(self.susceptance[k]),
                    "capacity": float(self.line_capacity[k]),
                }
                for k in range(self.n_line)
            ],
            "generators": [
                {
                    "id": gid,
                    "bus": self.bus_ids[self.gen_bus[i]],
                    "min": float(self.g_min[i]),
                    "max": float(self.g_max[i]),
                    "capacity": float(self.g_cap[i]),
                    "gamma": float(self.gamma[i]),
                    "cost": [[float(x), float(y)] for x, y in self.cost_points[i]],
                }
                for i, gid in enumerate(self.gen_ids)
            ],
            "contingencies": list(self.contingencies),
        }

    def fingerprint(self) -> str:
        """sha256 of the canonical document; identifies the grid in artifacts."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PtdfModel:
    """Dense injection-to-flow map for a fixed reference bus.

    ``k0[l, n]`` is the MW flow induced on line l by injecting 1 MW at bus n
    and withdrawing it at the reference bus; the reference column is zero.
    """

    k0: np.ndarray        # (n_line, n_bus)
    ref_bus: int

    def flows(self, injection: np.ndarray) -> np.ndarray:
        """Line flows (MW) for a balanced injection vector (MW per bus)."""
        return self.k0 @ injection


@dataclass(frozen=True)
class FlowCuts:
    """Thermal-limit constraints on post-contingency dispatch for one load.

    With flows written as k0 @ (d - B g_s), the two one-sided families are

        upper:  (-k1) @ g_s + k2 >= 0      (flow <= capacity)
        lower:  ( k1) @ g_s + k3 >= 0      (flow >= -capacity)

    where k1 = -k0 @ B, k2 = capacity - k0 @ d, k3 = capacity + k0 @ d.
    A dispatch satisfies both families iff every line is within its limit.
    """

    k1: np.ndarray        # (n_line, n_gen) = -(k0 @ B)
    k2: np.ndarray        # (n_line,) MW
    k3: np.ndarray        # (n_line,) MW

    def slacks(self, g_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(upper, lower) slack per line; negative entries are violations (MW)."""
        t = self.k1 @ g_s
        return -t + self.k2, t + self.k3

    def upper_row(self, line: int) -> tuple[np.ndarray, float]:
        """Coefficients (c, rhs) of the upper-family row: c @ g_s + rhs >= 0."""
        return -self.k1[line], float(self.k2[line])

    def lower_row(self, line: int) -> tuple[np.ndarray, float]:
        return self.k1[line], float(self.k3[line])


@dataclass(frozen=True)
class LoadVector:
    """Per-bus net load (MW) for one instance."""

    d: np.ndarray
    capacity_feasible: bool = True

    @property
    def total(self) -> float:
        return float(self.d.sum())


def load_vector(grid: Grid, d) -> LoadVector:
    """Wrap an instance load, flagging loads beyond total operating capacity."""
    d = np.asarray(d, dtype=float)
    if d.shape != (grid.n_bus,):
        raise ValueError(f"load vector has shape {d.shape}, expected ({grid.n_bus},)")
    return LoadVector(d=d, capacity_feasible=bool(d.sum() <= grid.g_max.sum()))


def parse_grid(text: str) -> Grid:
    """Parse and validate a grid document.

    Raises a distinct :class:`GridError` subclass for schema violations,
    disconnected networks, nonconvex costs and inconsistent generator limits.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, _GRID_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"schema violation at {list(exc.absolute_path)}: {exc.message}") from exc

    bus_ids = [b["id"] for b in doc["buses"]]
    if len(set(bus_ids)) != len(bus_ids):
        raise SchemaError("duplicate bus ids")
    bus_index = {b: i for i, b in enumerate(bus_ids)}
    nominal_load = np.array([float(b.get("load", 0.0)) for b in doc["buses"]])

    ref_bus = doc.get("ref_bus", min(bus_ids))
    if ref_bus not in bus_index:
        raise SchemaError(f"ref_bus {ref_bus} is not a bus id")

    lines = doc["lines"]
    for ln in lines:
        if ln["from"] not in bus_index or ln["to"] not in bus_index:
            raise SchemaError(f"line {ln['from']}-{ln['to']} references unknown bus")
        if ln["from"] == ln["to"]:
            raise SchemaError(f"line at bus {ln['from']} is a self-loop")
        if ln["capacity"] <= 0:
            raise SchemaError(f"line {ln['from']}-{ln['to']} capacity must be > 0")
    line_from = np.array([bus_index[ln["from"]] for ln in lines], dtype=int)
    line_to = np.array([bus_index[ln["to"]] for ln in lines], dtype=int)
    susceptance = np.array([float(ln["susceptance"]) for ln in lines])
    line_capacity = np.array([float(ln["capacity"]) for ln in lines])

    n_bus = len(bus_ids)
    adj = sp.coo_matrix(
        (np.ones(len(lines)), (line_from, line_to)), shape=(n_bus, n_bus)
    )
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise DisconnectedNetworkError(f"network has {n_comp} components, expected 1")

    gens = doc["generators"]
    gen_ids = [g["id"] for g in gens]
    if len(set(gen_ids)) != len(gen_ids):
        raise SchemaError("duplicate generator ids")
    for g in gens:
        if g["bus"] not in bus_index:
            raise SchemaError(f"generator {g['id']} references unknown bus {g['bus']}")
        gmin = float(g.get("min", 0.0))
        gmax = float(g["max"])
        gcap = float(g.get("capacity", gmax))
        if gmax > gcap:
            raise CapacityLimitError(
                f"generator {g['id']}: max {gmax} exceeds capacity {gcap}"
            )
        if gmin > gmax:
            raise CapacityLimitError(
                f"generator {g['id']}: min {gmin} exceeds max {gmax}"
            )
        if not 0.0 < float(g["gamma"]) <= 1.0:
            raise SchemaError(f"generator {g['id']}: gamma must be in (0, 1]")
        _check_cost(g["id"], np.asarray(g["cost"], dtype=float), gmin, gmax)

    contingencies = doc.get("contingencies", sorted(gen_ids))
    unknown = set(contingencies) - set(gen_ids)
    if unknown:
        raise SchemaError(f"contingencies reference unknown generators {sorted(unknown)}")

    return Grid(
        name=doc.get("name", "unnamed"),
        bus_ids=tuple(bus_ids),
        ref_bus=ref_bus,
        nominal_load=nominal_load,
        line_from=line_from,
        line_to=line_to,
        susceptance=susceptance,
        line_capacity=line_capacity,
        gen_ids=tuple(gen_ids),
        gen_bus=np.array([bus_index[g["bus"]] for g in gens], dtype=int),
        g_min=np.array([float(g.get("min", 0.0)) for g in gens]),
        g_max=np.array([float(g["max"]) for g in gens]),
        g_cap=np.array([float(g.get("capacity", g["max"])) for g in gens]),
        gamma=np.array([float(g["gamma"]) for g in gens]),
        cost_points=tuple(np.asarray(g["cost"], dtype=float) for g in gens),
        contingencies=tuple(contingencies),
    )


def _check_cost(gen_id: int, pts: np.ndarray, gmin: float, gmax: float) -> None:
    dx = np.diff(pts[:, 0])
    if np.any(dx <= 0):
        raise NonconvexCostError(f"generator {gen_id}: cost breakpoints must increase in MW")
    slopes = np.diff(pts[:, 1]) / dx
    if np.any(np.diff(slopes) < -1e-9):
        raise NonconvexCostError(f"generator {gen_id}: cost slopes decrease (nonconvex)")
    if pts[0, 0] > gmin + 1e-9 or pts[-1, 0] < gmax - 1e-9:
        raise SchemaError(
            f"generator {gen_id}: cost breakpoints must span [{gmin}, {gmax}]"
        )


def load_grid(path) -> Grid:
    return parse_grid(Path(path).read_text(encoding="utf-8"))


def build_ptdf(grid: Grid) -> PtdfModel:
    """Factorize the reduced nodal susceptance matrix into a dense PTDF map.

    Flows are reference-independent even though the matrix itself is not.
    """
    a = grid.line_incidence()
    s = grid.susceptance[:, None] * a              # angle-to-flow, (L, N)
    bbus = a.T @ s                                  # nodal susceptance, (N, N)
    ref = grid.ref_index
    keep = [i for i in range(grid.n_bus) if i != ref]
    bred = bbus[np.ix_(keep, keep)]
    try:
        inv = np.linalg.solve(bred, np.eye(len(keep)))
    except np.linalg.LinAlgError as exc:
        raise DisconnectedNetworkError("susceptance matrix is singular (islanded network)") from exc
    k0 = np.zeros((grid.n_line, grid.n_bus))
    k0[:, keep] = s[:, keep] @ inv
    return PtdfModel(k0=k0, ref_bus=grid.ref_bus)


def flow_cuts(ptdf: PtdfModel, grid: Grid, d) -> FlowCuts:
    """Precompute the per-load thermal constraints on contingency dispatch."""
    dv = d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)
    if dv.shape != (grid.n_bus,):
        raise ValueError(f"load vector has shape {dv.shape}, expected ({grid.n_bus},)")
    k0d = ptdf.k0 @ dv
    k1 = -(ptdf.k0 @ grid.gen_incidence())
    return FlowCuts(k1=k1, k2=grid.line_capacity - k0d, k3=grid.line_capacity + k0d)
