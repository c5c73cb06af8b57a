"""Dispatch prediction: fully-connected network trained with Lagrangian-dual
penalties, plus the outer loop that adds contingency constraints on demand.

The network maps a load vector to the nominal dispatch.  Physical and
operational constraints enter the loss as multiplier-weighted violation
terms; multipliers rise by rho times the median violation after each
training pass.  Contingency thermal constraints are added only for outage
states that frequently produce the worst line violation, with the
post-contingency dispatch approximated by clipping the linear response at
zero and at the operating limit; the balancing signal comes from bisection
on the prediction and is held constant during backpropagation.

Violations are penalized on a dimensionless scale (balance over total load,
flow rows over line capacity, box rows over unit capacity) so multiplier
updates with large rho stay well conditioned; inputs and outputs are
normalized per component.  All randomness flows through one seeded
generator, and the default single-threaded run is bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .datagen import Dataset
from .grid import Grid, LoadVector, build_ptdf

MODEL_MAGIC = b"SCOPF-MODEL/v1\n"


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class FingerprintMismatchError(ValueError):
    """Model was trained for a different grid."""


@dataclass(frozen=True)
class TrainConfig:
    hidden_widths: tuple[int, ...] | None = None   # default: 2 * n_gen, 4 layers
    inner_steps: int = 20000
    batch_size: int = 32
    alpha_hi: float = 1e-4
    alpha_lo: float = 1e-10
    rho: float = 1e5
    jmax: int = 1
    epsilon_mw: float = 1.0          # counter threshold on worst line violation
    beta1: float = 0.05              # frequency threshold for adding a state
    beta_c: float = 1.5e-2           # stopping tolerance on nominal medians
    max_outer: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.beta1 < 0 or not 0 < self.beta_c:
            raise ValueError("beta1 must be >= 0 and beta_c > 0")
        if self.inner_steps < 1 or self.batch_size < 1 or self.jmax < 1:
            raise ValueError("inner_steps, batch_size and jmax must be >= 1")
        if self.epsilon_mw <= 0 or self.rho < 0:
            raise ValueError("epsilon_mw must be > 0 and rho >= 0")


@dataclass
class MlpModel:
    """Weights of the five-layer network plus the I/O scaling vectors."""

    weights: list[np.ndarray]        # W_i, shape (out, in)
    biases: list[np.ndarray]
    d_scale: np.ndarray              # (n_bus,)
    g_scale: np.ndarray              # (n_gen,)

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.d_scale.copy(),
            self.g_scale.copy(),
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()


def init_mlp(grid: Grid, hidden_widths: tuple[int, ...] | None,
             rng: np.random.Generator) -> MlpModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if hidden_widths is None:
        hidden_widths = (2 * grid.n_gen,) * 4
    sizes = [grid.n_bus, *hidden_widths, grid.n_gen]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    d_scale = np.maximum(np.abs(grid.nominal_load), 1.0)
    g_scale = np.maximum(grid.g_max, 1.0)
    return MlpModel(weights, biases, d_scale, g_scale)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _forward_cached(mlp: MlpModel, x_norm: np.ndarray):
    """Forward pass keeping activations/preactivations for backprop.

    Hidden layers use softplus, the output layer is linear.
    """
    acts = [x_norm]
    pres = []
    a = x_norm
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        pres.append(z)
        a = z if i == last else softplus(z)
        acts.append(a)
    return acts, pres


def forward(mlp: MlpModel, d) -> np.ndarray:
    """Predicted dispatch (MW) for one load vector or a batch of them."""
    dv = d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)
    single = dv.ndim == 1
    x = np.atleast_2d(dv) / mlp.d_scale
    acts, _ = _forward_cached(mlp, x)
    out = acts[-1] * mlp.g_scale
    return out[0] if single else out


def _backward(mlp: MlpModel, acts, pres, d_out: np.ndarray):
    """Gradients of a scalar loss given d loss / d (normalized output)."""
    dws = [None] * len(mlp.weights)
    dbs = [None] * len(mlp.biases)
    delta = d_out
    for i in range(len(mlp.weights) - 1, -1, -1):
        dws[i] = delta.T @ acts[i]
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i]) * expit(pres[i - 1])
    return dws, dbs


@dataclass
class ConstraintSet:
    """Penalized constraints with one multiplier per row.

    Nominal rows (balance, line flows both directions, generator box both
    sides) are always present; thermal rows for an outage state appear only
    once that state has been added.
    """

    lam_balance: float
    lam_flow_up: np.ndarray          # (n_line,)
    lam_flow_lo: np.ndarray
    lam_box_up: np.ndarray           # (n_gen,)
    lam_box_lo: np.ndarray
    states: list[int] = field(default_factory=list)
    lam_cut_up: dict[int, np.ndarray] = field(default_factory=dict)
    lam_cut_lo: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def nominal(cls, grid: Grid) -> "ConstraintSet":
        return cls(
            lam_balance=0.0,
            lam_flow_up=np.zeros(grid.n_line),
            lam_flow_lo=np.zeros(grid.n_line),
            lam_box_up=np.zeros(grid.n_gen),
            lam_box_lo=np.zeros(grid.n_gen),
        )

    def copy(self) -> "ConstraintSet":
        return ConstraintSet(
            lam_balance=self.lam_balance,
            lam_flow_up=self.lam_flow_up.copy(),
            lam_flow_lo=self.lam_flow_lo.copy(),
            lam_box_up=self.lam_box_up.copy(),
            lam_box_lo=self.lam_box_lo.copy(),
            states=list(self.states),
            lam_cut_up={s: v.copy() for s, v in self.lam_cut_up.items()},
            lam_cut_lo={s: v.copy() for s, v in self.lam_cut_lo.items()},
        )

    def add_state(self, s: int, n_line: int) -> None:
        if s not in self.states:
            self.states.append(s)
            self.lam_cut_up[s] = np.zeros(n_line)
            self.lam_cut_lo[s] = np.zeros(n_line)

    def multipliers(self) -> np.ndarray:
        parts = [np.atleast_1d(self.lam_balance), self.lam_flow_up, self.lam_flow_lo,
                 self.lam_box_up, self.lam_box_lo]
        for s in self.states:
            parts.extend([self.lam_cut_up[s], self.lam_cut_lo[s]])
        return np.concatenate(parts)


@dataclass
class _Context:
    """Precomputed per-dataset training quantities."""

    grid: Grid
    k0b: np.ndarray                  # (n_line, n_gen)
    cap: np.ndarray                  # (n_line,)
    box_scale: np.ndarray            # (n_gen,)
    d_phys: np.ndarray               # (T, n_bus)
    k0d: np.ndarray                  # (T, n_line)
    totals: np.ndarray               # (T,)
    labels: np.ndarray               # (T, n_gen)
    d_norm: np.ndarray
    labels_norm: np.ndarray

    @property
    def n_instances(self) -> int:
        return len(self.totals)


def make_context(grid: Grid, dataset: Dataset, mlp: MlpModel) -> _Context:
    if dataset.fingerprint != grid.fingerprint():
        raise FingerprintMismatchError("dataset was labeled on a different grid")
    ptdf = build_ptdf(grid)
    k0b = ptdf.k0 @ grid.gen_incidence()
    d_phys = np.stack([r.d for r in dataset.records])
    labels = np.stack([r.g for r in dataset.records])
    return _Context(
        grid=grid,
        k0b=k0b,
        cap=grid.line_capacity,
        box_scale=np.maximum(grid.g_cap, 1.0),
        d_phys=d_phys,
        k0d=d_phys @ ptdf.k0.T,
        totals=d_phys.sum(axis=1),
        labels=labels,
        d_norm=d_phys / mlp.d_scale,
        labels_norm=labels / mlp.g_scale,
    )


def batch_balance_signals(grid: Grid, g_phys: np.ndarray, s: int,
                          targets: np.ndarray, tol: np.ndarray | None = None,
                          max_iter: int = 60) -> np.ndarray:
    """Vectorized balancing signal per row of ``g_phys`` for outage ``s``.

    Matches the scalar bisection: rows already at or above target at n=0
    return 0, rows short at n=1 return 1, others bisect to tolerance.
    """
    j = grid.gen_index(s)
    rbar = grid.response_limit
    gmax = grid.g_max
    if tol is None:
        tol = 1e-6 * np.maximum(np.abs(targets), 1.0)

    def total(n):
        gs = np.clip(g_phys + n[:, None] * rbar, 0.0, gmax)
        gs[:, j] = 0.0
        return gs.sum(axis=1)

    m = len(targets)
    lo = np.zeros(m)
    hi = np.ones(m)
    n = np.ones(m)
    t0 = total(lo)
    t1 = total(hi)
    surplus = t0 >= targets
    shortfall = t1 < targets - tol
    n[surplus] = 0.0
    active = ~(surplus | shortfall)
    for _ in range(max_iter):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        tm = total(mid)
        hit = active & (np.abs(tm - targets) <= tol)
        n[hit] = mid[hit]
        active = active & ~hit
        low_side = active & (tm < targets)
        lo[low_side] = mid[low_side]
        high_side = active & ~low_side
        hi[high_side] = mid[high_side]
        n[active] = hi[active]
    return n


def clipped_response(grid: Grid, g_phys: np.ndarray, n: np.ndarray, s: int):
    """Post-contingency dispatch approximation and its interior mask.

    The mask is 1 where the response is strictly between the clip bounds,
    i.e. where d g_s / d g = 1; ties clip to 0 like the saturation branch.
    """
    j = grid.gen_index(s)
    raw = g_phys + n[:, None] * grid.response_limit
    gs = np.clip(raw, 0.0, grid.g_max)
    interior = ((raw > 0.0) & (raw < grid.g_max)).astype(float)
    gs[:, j] = 0.0
    interior[:, j] = 0.0
    return gs, interior


def _nominal_violations(ctx: _Context, g_phys: np.ndarray, idx):
    """Relative violations of the always-on rows for a batch."""
    totals = ctx.totals[idx]
    resid = (g_phys.sum(axis=1) - totals) / totals
    flow = ctx.k0d[idx] - g_phys @ ctx.k0b.T
    over_up = (flow - ctx.cap) / ctx.cap
    over_lo = (-flow - ctx.cap) / ctx.cap
    grid = ctx.grid
    box_up = (g_phys - grid.g_max) / ctx.box_scale
    box_lo = (grid.g_min - g_phys) / ctx.box_scale
    return {
        "balance": np.abs(resid),
        "flow_up": np.maximum(0.0, over_up),
        "flow_lo": np.maximum(0.0, over_lo),
        "box_up": np.maximum(0.0, box_up),
        "box_lo": np.maximum(0.0, box_lo),
        "_resid_raw": resid,
        "_flow": flow,
    }


def _cut_violations(ctx: _Context, g_phys: np.ndarray, idx, s: int,
                    n: np.ndarray):
    gs, interior = clipped_response(ctx.grid, g_phys, n, s)
    flow = ctx.k0d[idx] - gs @ ctx.k0b.T
    up = np.maximum(0.0, (flow - ctx.cap) / ctx.cap)
    lo = np.maximum(0.0, (-flow - ctx.cap) / ctx.cap)
    return up, lo, interior


def _signals_for(ctx: _Context, g_phys: np.ndarray, idx, cset: ConstraintSet):
    return {
        s: batch_balance_signals(ctx.grid, g_phys, s, ctx.totals[idx])
        for s in cset.states
    }


def evaluate_loss(ctx: _Context, mlp: MlpModel, cset: ConstraintSet, idx,
                  signals: dict[int, np.ndarray] | None = None) -> float:
    """Mean penalized loss over the given instance indices.

    ``signals`` pins the balancing signals of the added states (used by
    finite-difference checks; training recomputes them from the prediction).
    """
    acts, _ = _forward_cached(mlp, ctx.d_norm[idx])
    out_norm = acts[-1]
    g_phys = out_norm * mlp.g_scale
    l0 = np.linalg.norm(out_norm - ctx.labels_norm[idx], axis=1)
    nom = _nominal_violations(ctx, g_phys, idx)
    pen = (cset.lam_balance * nom["balance"]
           + nom["flow_up"] @ cset.lam_flow_up
           + nom["flow_lo"] @ cset.lam_flow_lo
           + nom["box_up"] @ cset.lam_box_up
           + nom["box_lo"] @ cset.lam_box_lo)
    if cset.states:
        if signals is None:
            signals = _signals_for(ctx, g_phys, idx, cset)
        for s in cset.states:
            up, lo, _ = _cut_violations(ctx, g_phys, idx, s, signals[s])
            pen = pen + up @ cset.lam_cut_up[s] + lo @ cset.lam_cut_lo[s]
    return float(np.mean(l0 + pen))


def loss_and_gradients(ctx: _Context, mlp: MlpModel, cset: ConstraintSet, idx,
                       signals: dict[int, np.ndarray] | None = None):
    """Penalized loss with its subgradient in the network parameters.

    Kinks take the zero element: exact zeros contribute nothing through
    max(0, .), |.| and the response clipping.
    """
    b = len(idx)
    acts, pres = _forward_cached(mlp, ctx.d_norm[idx])
    out_norm = acts[-1]
    g_phys = out_norm * mlp.g_scale
    grid = ctx.grid

    diff = out_norm - ctx.labels_norm[idx]
    l0 = np.linalg.norm(diff, axis=1)
    d_out = diff / np.maximum(l0, 1e-300)[:, None]
    d_out[l0 == 0.0] = 0.0

    nom = _nominal_violations(ctx, g_phys, idx)
    totals = ctx.totals[idx]
    pen = (cset.lam_balance * nom["balance"]
           + nom["flow_up"] @ cset.lam_flow_up
           + nom["flow_lo"] @ cset.lam_flow_lo
           + nom["box_up"] @ cset.lam_box_up
           + nom["box_lo"] @ cset.lam_box_lo)
    d_phys = np.zeros_like(g_phys)
    d_phys += (cset.lam_balance * np.sign(nom["_resid_raw"]) / totals)[:, None]
    w_flow = ((nom["flow_lo"] > 0) * cset.lam_flow_lo
              - (nom["flow_up"] > 0) * cset.lam_flow_up) / ctx.cap
    d_phys += w_flow @ ctx.k0b
    d_phys += ((nom["box_up"] > 0) * cset.lam_box_up
               - (nom["box_lo"] > 0) * cset.lam_box_lo) / ctx.box_scale

    if cset.states:
        if signals is None:
            signals = _signals_for(ctx, g_phys, idx, cset)
        for s in cset.states:
            up, lo, interior = _cut_violations(ctx, g_phys, idx, s, signals[s])
            pen = pen + up @ cset.lam_cut_up[s] + lo @ cset.lam_cut_lo[s]
            w_cut = ((lo > 0) * cset.lam_cut_lo[s]
                     - (up > 0) * cset.lam_cut_up[s]) / ctx.cap
            d_phys += (w_cut @ ctx.k0b) * interior

    loss = float(np.mean(l0 + pen))
    d_out = (d_out + d_phys * mlp.g_scale) / b
    dws, dbs = _backward(mlp, acts, pres, d_out)
    return loss, dws, dbs


ROW_KINDS = ("balance", "flow_up", "flow_lo", "box_up", "box_lo", "cut_up", "cut_lo")


def violation_and_subgradient(grid: Grid, d, g_hat: np.ndarray, row: tuple,
                              n_signal: float | None = None):
    """Violation and subgradient (w.r.t. the dispatch) of one constraint row.

    ``row`` is ("balance",), ("flow_up"|"flow_lo", line), ("box_up"|"box_lo",
    gen) or ("cut_up"|"cut_lo", state_id, line).  For cut rows the balancing
    signal is bisected from ``g_hat`` unless pinned via ``n_signal``.
    """
    from .apr import bisect_balance

    dv = d.d if isinstance(d, LoadVector) else np.asarray(d, dtype=float)
    ptdf = build_ptdf(grid)
    k0b = ptdf.k0 @ grid.gen_incidence()
    k0d = ptdf.k0 @ dv
    g_hat = np.asarray(g_hat, dtype=float)
    kind = row[0]
    if kind == "balance":
        total = dv.sum()
        r = (g_hat.sum() - total) / total
        return abs(r), np.full(grid.n_gen, np.sign(r) / total)
    if kind in ("flow_up", "flow_lo"):
        l = row[1]
        f = k0d[l] - k0b[l] @ g_hat
        cap = grid.line_capacity[l]
        sgn = 1.0 if kind == "flow_up" else -1.0
        v = max(0.0, (sgn * f - cap) / cap)
        grad = (-sgn * k0b[l] / cap) if v > 0 else np.zeros(grid.n_gen)
        return v, grad
    if kind in ("box_up", "box_lo"):
        i = row[1]
        scale = max(grid.g_cap[i], 1.0)
        grad = np.zeros(grid.n_gen)
        if kind == "box_up":
            v = max(0.0, (g_hat[i] - grid.g_max[i]) / scale)
            if v > 0:
                grad[i] = 1.0 / scale
        else:
            v = max(0.0, (grid.g_min[i] - g_hat[i]) / scale)
            if v > 0:
                grad[i] = -1.0 / scale
        return v, grad
    if kind in ("cut_up", "cut_lo"):
        s, l = row[1], row[2]
        if n_signal is None:
            n_signal = bisect_balance(grid, g_hat, s, dv).n
        gs, interior = clipped_response(grid, g_hat[None, :],
                                        np.array([n_signal]), s)
        f = k0d[l] - k0b[l] @ gs[0]
        cap = grid.line_capacity[l]
        sgn = 1.0 if kind == "cut_up" else -1.0
        v = max(0.0, (sgn * f - cap) / cap)
        grad = (-sgn * k0b[l] / cap) * interior[0] if v > 0 else np.zeros(grid.n_gen)
        return v, grad
    raise ValueError(f"unknown constraint row kind {kind!r}")


def _alpha_schedule(cfg: TrainConfig) -> np.ndarray:
    k = np.arange(cfg.inner_steps)
    if cfg.inner_steps == 1:
        return np.array([cfg.alpha_hi])
    ratio = cfg.alpha_lo / cfg.alpha_hi
    return cfg.alpha_hi * ratio ** (k / (cfg.inner_steps - 1))


def _median_violations(ctx: _Context, mlp: MlpModel, cset: ConstraintSet) -> dict:
    """Per-row median violations over the whole training set."""
    g_phys = forward(mlp, ctx.d_phys)
    idx = np.arange(ctx.n_instances)
    nom = _nominal_violations(ctx, g_phys, idx)
    meds = {
        "balance": float(np.median(nom["balance"])),
        "flow_up": np.median(nom["flow_up"], axis=0),
        "flow_lo": np.median(nom["flow_lo"], axis=0),
        "box_up": np.median(nom["box_up"], axis=0),
        "box_lo": np.median(nom["box_lo"], axis=0),
    }
    if cset.states:
        signals = _signals_for(ctx, g_phys, idx, cset)
        cut_up, cut_lo = {}, {}
        for s in cset.states:
            up, lo, _ = _cut_violations(ctx, g_phys, idx, s, signals[s])
            cut_up[s] = np.median(up, axis=0)
            cut_lo[s] = np.median(lo, axis=0)
        meds["cut_up"] = cut_up
        meds["cut_lo"] = cut_lo
    return meds


def nominal_medians_ok(meds: dict, beta_c: float) -> bool:
    return (meds["balance"] <= beta_c
            and float(meds["flow_up"].max(initial=0.0)) <= beta_c
            and float(meds["flow_lo"].max(initial=0.0)) <= beta_c
            and float(meds["box_up"].max(initial=0.0)) <= beta_c
            and float(meds["box_lo"].max(initial=0.0)) <= beta_c)


def train_lagrangian(ctx: _Context, mlp: MlpModel, cset: ConstraintSet,
                     cfg: TrainConfig, rng: np.random.Generator):
    """Minibatch subgradient passes followed by a multiplier ascent step.

    Runs ``jmax`` passes; each trains the weights with the multipliers fixed,
    then raises every multiplier by rho times its median violation over the
    full training set.  Returns updated copies plus a small info dict.
    """
    mlp = mlp.copy()
    cset = cset.copy()
    alphas = _alpha_schedule(cfg)
    t = ctx.n_instances
    info: dict = {"loss_first": None, "loss_last": None}
    for _ in range(cfg.jmax):
        for k in range(cfg.inner_steps):
            idx = rng.integers(0, t, cfg.batch_size)
            loss, dws, dbs = loss_and_gradients(ctx, mlp, cset, idx)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at inner step {k} "
                    f"(multiplier max {cset.multipliers().max():.3g})"
                )
            if info["loss_first"] is None:
                info["loss_first"] = loss
            info["loss_last"] = loss
            a = alphas[k]
            for w, dw in zip(mlp.weights, dws):
                w -= a * dw
            for b_, db in zip(mlp.biases, dbs):
                b_ -= a * db
        meds = _median_violations(ctx, mlp, cset)
        cset.lam_balance += cfg.rho * meds["balance"]
        cset.lam_flow_up += cfg.rho * meds["flow_up"]
        cset.lam_flow_lo += cfg.rho * meds["flow_lo"]
        cset.lam_box_up += cfg.rho * meds["box_up"]
        cset.lam_box_lo += cfg.rho * meds["box_lo"]
        for s in cset.states:
            cset.lam_cut_up[s] += cfg.rho * meds["cut_up"][s]
            cset.lam_cut_lo[s] += cfg.rho * meds["cut_lo"][s]
        info["medians"] = meds
    return mlp, cset, info


def _worst_violations(ctx: _Context, g_phys: np.ndarray):
    """Worst line violation (MW), attaining state and line, per instance."""
    t = len(g_phys)
    idx = np.arange(ctx.n_instances)
    phi = np.zeros(t)
    s_att = np.full(t, -1, dtype=int)
    line_att = np.zeros(t, dtype=int)
    for s in sorted(ctx.grid.contingencies):
        n = batch_balance_signals(ctx.grid, g_phys, s, ctx.totals)
        gs, _ = clipped_response(ctx.grid, g_phys, n, s)
        flow = ctx.k0d[idx] - gs @ ctx.k0b.T
        over = np.maximum(np.maximum(0.0, flow - ctx.cap),
                          np.maximum(0.0, -flow - ctx.cap))
        worst = over.max(axis=1)
        lines = over.argmax(axis=1)
        better = worst > phi
        phi[better] = worst[better]
        s_att[better] = s
        line_att[better] = lines[better]
    return phi, s_att, line_att


@dataclass
class TrainedModel:
    mlp: MlpModel
    cset: ConstraintSet
    grid_fingerprint: str
    config: TrainConfig
    outer_iterations: int
    converged: bool
    log: list[dict] = field(default_factory=list)

    @property
    def added_states(self) -> list[int]:
        return list(self.cset.states)


def train_ccga_dnn(grid: Grid, dataset: Dataset, cfg: TrainConfig | None = None) -> TrainedModel:
    """Outer constraint-generation loop around the Lagrangian-dual trainer.

    After each training pass every instance is screened: contingencies whose
    worst-line violation leads more than a beta1 fraction of instances get
    their thermal rows (with the clipped-response approximation) added to the
    penalized set.  Stops when no state qualifies and the nominal medians are
    within beta_c; otherwise existing cut multipliers rise by rho times the
    median (capacity-relative) top violation.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    mlp = init_mlp(grid, cfg.hidden_widths, rng)
    ctx = make_context(grid, dataset, mlp)
    cset = ConstraintSet.nominal(grid)
    cont_ids = sorted(grid.contingencies)
    cont_pos = {s: i for i, s in enumerate(cont_ids)}
    t = ctx.n_instances
    log: list[dict] = []
    converged = False
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        mlp, cset, info = train_lagrangian(ctx, mlp, cset, cfg, rng)
        g_all = forward(mlp, ctx.d_phys)
        phi, s_att, line_att = _worst_violations(ctx, g_all)
        p = np.zeros(len(cont_ids))
        hot = phi > cfg.epsilon_mw
        np.add.at(p, [cont_pos[s] for s in s_att[hot]], 1.0)
        s_new = {cont_ids[i] for i in np.nonzero(p / t > cfg.beta1)[0]}
        meds = info["medians"]
        phi_rel = np.where(s_att >= 0, phi / ctx.cap[line_att], 0.0)
        phi_med_mw = float(np.median(phi))
        phi_med_rel = float(np.median(phi_rel))
        log.append({
            "outer": outer,
            "loss_first": info["loss_first"],
            "loss_last": info["loss_last"],
            "median_balance": meds["balance"],
            "median_phi_mw": phi_med_mw,
            "median_phi_rel": phi_med_rel,
            "n_hot_instances": int(hot.sum()),
            "states": sorted(cset.states),
            "candidates": sorted(s_new),
            "weight_checksum": mlp.checksum(),
        })
        if not s_new and nominal_medians_ok(meds, cfg.beta_c):
            converged = True
            break
        for s in cset.states:
            cset.lam_cut_up[s] += cfg.rho * phi_med_rel
            cset.lam_cut_lo[s] += cfg.rho * phi_med_rel
        for s in sorted(s_new - set(cset.states)):
            cset.add_state(s, grid.n_line)
    return TrainedModel(
        mlp=mlp,
        cset=cset,
        grid_fingerprint=grid.fingerprint(),
        config=cfg,
        outer_iterations=outer,
        converged=converged,
        log=log,
    )


@dataclass(frozen=True)
class PredictionResult:
    g: np.ndarray
    wall_time_s: float


def predict(model: TrainedModel, grid: Grid, d) -> PredictionResult:
    """Timed forward pass; refuses models trained for another grid."""
    if model.grid_fingerprint != grid.fingerprint():
        raise FingerprintMismatchError("model fingerprint does not match this grid")
    t0 = time.perf_counter()
    g = forward(model.mlp, d)
    return PredictionResult(g=g, wall_time_s=time.perf_counter() - t0)


def save_model(model: TrainedModel, path) -> None:
    """Single-file JSON-header + raw-array format, byte-deterministic."""
    arrays: list[tuple[str, np.ndarray]] = []
    for i, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
        arrays.append((f"W{i}", w))
        arrays.append((f"b{i}", b))
    arrays.append(("d_scale", model.mlp.d_scale))
    arrays.append(("g_scale", model.mlp.g_scale))
    cs = model.cset
    arrays.append(("lam_balance", np.atleast_1d(cs.lam_balance)))
    arrays.append(("lam_flow_up", cs.lam_flow_up))
    arrays.append(("lam_flow_lo", cs.lam_flow_lo))
    arrays.append(("lam_box_up", cs.lam_box_up))
    arrays.append(("lam_box_lo", cs.lam_box_lo))
    for s in cs.states:
        arrays.append((f"lam_cut_up_{s}", cs.lam_cut_up[s]))
        arrays.append((f"lam_cut_lo_{s}", cs.lam_cut_lo[s]))
    meta = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob = arr.tobytes()
        meta.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "n_layers": len(model.mlp.weights),
        "grid_fingerprint": model.grid_fingerprint,
        "config": asdict(model.config),
        "outer_iterations": model.outer_iterations,
        "converged": model.converged,
        "states": list(model.cset.states),
        "log": model.log,
        "arrays": meta,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack(">Q", len(hb)))
        f.write(hb)
        f.write(b"".join(blobs))


def load_model(path) -> TrainedModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise ValueError(f"not a model file: {path}")
    n = struct.unpack(">Q", raw[len(MODEL_MAGIC):len(MODEL_MAGIC) + 8])[0]
    start = len(MODEL_MAGIC) + 8
    header = json.loads(raw[start:start + n])
    payload = raw[start + n:]
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape))
        arrays[meta["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=meta["offset"]
        ).reshape(shape).copy()
    nl = header["n_layers"]
    mlp = MlpModel(
        weights=[arrays[f"W{i}"] for i in range(nl)],
        biases=[arrays[f"b{i}"] for i in range(nl)],
        d_scale=arrays["d_scale"],
        g_scale=arrays["g_scale"],
    )
    states = list(header["states"])
    cset = ConstraintSet(
        lam_balance=float(arrays["lam_balance"][0]),
        lam_flow_up=arrays["lam_flow_up"],
        lam_flow_lo=arrays["lam_flow_lo"],
        lam_box_up=arrays["lam_box_up"],
        lam_box_lo=arrays["lam_box_lo"],
        states=states,
        lam_cut_up={s: arrays[f"lam_cut_up_{s}"] for s in states},
        lam_cut_lo={s: arrays[f"lam_cut_lo_{s}"] for s in states},
    )
    cfg_dict = dict(header["config"])
    if cfg_dict.get("hidden_widths") is not None:
        cfg_dict["hidden_widths"] = tuple(cfg_dict["hidden_widths"])
    return TrainedModel(
        mlp=mlp,
        cset=cset,
        grid_fingerprint=header["grid_fingerprint"],
        config=TrainConfig(**cfg_dict),
        outer_iterations=header["outer_iterations"],
        converged=header["converged"],
        log=header["log"],
    )
