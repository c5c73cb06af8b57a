"""Command line entry point.

Subcommands: gen-data, train, predict, solve, bench.  Exit codes: 0 on
success, 1 on algorithmic failure (infeasible master, diverged training,
unconverged run), 2 on usage or I/O errors.  A TOML file passed via
--config supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import ccga as ccga_mod
from . import datagen, learner, metrics
from .ccga import CcgaConfig, MasterInfeasibleError, BackendFailureError
from .formulations import CutSet, build_extensive
from .grid import Grid, GridError, load_grid
from .learner import FingerprintMismatchError, TrainConfig, TrainingDivergedError
from .solvers import HighsBackend


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    with open(p, "rb") as f:
        return tomllib.load(f)


def _read_grid(path: str) -> Grid:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"grid file not found: {p}")
    try:
        return load_grid(p)
    except GridError as exc:
        raise UsageError(f"invalid grid document {p}: {exc}") from exc


def _read_load(path: str, grid: Grid) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"load file not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    d = np.asarray(doc["d"] if isinstance(doc, dict) else doc, dtype=float)
    if d.shape != (grid.n_bus,):
        raise UsageError(f"load vector has {d.size} entries, grid has {grid.n_bus} buses")
    return d


def _read_dataset(path: str) -> datagen.Dataset:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"dataset file not found: {p}")
    return datagen.load_dataset(p)


def _ccga_config(args, config: dict) -> CcgaConfig:
    section = dict(config.get("ccga", {}))
    for key in ("epsilon", "beta", "rel_gap", "time_limit", "max_iterations"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    try:
        return CcgaConfig(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad ccga configuration: {exc}") from exc


def _train_config(args, config: dict) -> TrainConfig:
    section = dict(config.get("train", {}))
    for key in ("inner_steps", "batch_size", "rho", "jmax", "epsilon_mw",
                "beta1", "beta_c", "max_outer", "seed", "alpha_hi", "alpha_lo"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    if getattr(args, "hidden_widths", None):
        section["hidden_widths"] = tuple(int(w) for w in args.hidden_widths.split(","))
    elif "hidden_widths" in section and section["hidden_widths"] is not None:
        section["hidden_widths"] = tuple(section["hidden_widths"])
    if getattr(args, "baseline_only", False):
        section["max_outer"] = 1
    try:
        return TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training configuration: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out_dir", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    grid = _read_grid(args.grid)
    cfg = _ccga_config(args, config)
    seed = args.seed if args.seed is not None else int(config.get("datagen", {}).get("seed", 0))
    count = args.count if args.count is not None else int(config.get("datagen", {}).get("count", 5000))
    if count < 1:
        raise UsageError("--count must be >= 1")
    dataset = datagen.generate_dataset(grid, count, seed, cfg, HighsBackend(),
                                       workers=args.workers)
    out = Path(args.out) if args.out else _out_dir(args) / f"{grid.name}-{count}x{seed}.jsonl"
    datagen.save_dataset(dataset, out)
    print(f"wrote {len(dataset.records)} records "
          f"({len(dataset.excluded)} excluded) to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    dataset = _read_dataset(args.dataset)
    grid = _read_grid(args.grid)
    cfg = _train_config(args, config)
    try:
        model = learner.train_ccga_dnn(grid, dataset, cfg)
    except FingerprintMismatchError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else _out_dir(args) / f"{grid.name}.model"
    learner.save_model(model, out)
    log_path = out.with_suffix(out.suffix + ".log.csv")
    _write_train_log(model, log_path)
    print(f"trained {model.outer_iterations} outer iterations "
          f"(converged={model.converged}, states={model.added_states}); "
          f"model at {out}, log at {log_path}")
    if not model.converged and not args.allow_unconverged:
        print("training did not converge within max_outer", file=sys.stderr)
        return 1
    return 0


def _write_train_log(model: learner.TrainedModel, path: Path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["outer", "loss_first", "loss_last", "median_balance",
                    "median_phi_mw", "median_phi_rel", "n_hot_instances",
                    "states", "candidates"])
        for entry in model.log:
            w.writerow([entry["outer"], entry["loss_first"], entry["loss_last"],
                        entry["median_balance"], entry["median_phi_mw"],
                        entry["median_phi_rel"], entry["n_hot_instances"],
                        " ".join(map(str, entry["states"])),
                        " ".join(map(str, entry["candidates"]))])


def cmd_predict(args) -> int:
    grid = _read_grid(args.grid)
    p = Path(args.model)
    if not p.exists():
        raise UsageError(f"model file not found: {p}")
    model = learner.load_model(p)
    d = _read_load(args.load, grid)
    try:
        result = learner.predict(model, grid, d)
    except FingerprintMismatchError as exc:
        raise UsageError(str(exc)) from exc
    payload = {"g": result.g.tolist(), "wall_time_s": result.wall_time_s}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"prediction written to {args.out} ({result.wall_time_s * 1e3:.3f} ms)")
    else:
        print(json.dumps(payload))
    return 0


def cmd_solve(args) -> int:
    config = _load_config(args.config)
    grid = _read_grid(args.grid)
    d = _read_load(args.load, grid)
    cfg = _ccga_config(args, config)
    out = _out_dir(args)
    backend = HighsBackend()

    if args.mode == "extensive":
        model = build_extensive(grid, d)
        if args.export_lp:
            (out / "extensive.lp").write_text(model.to_lp(), encoding="utf-8")
        res = backend.solve(model, rel_gap=cfg.rel_gap, time_limit=cfg.time_limit)
        if res.status != "optimal":
            print(f"extensive solve: {res.status}", file=sys.stderr)
            return 1
        g = model.decode(res.x).g
        _write_solution(out / "solution.json", grid, g, objective=grid.cost(g),
                        status=res.status)
        print(f"extensive objective {res.objective:.4f} "
              f"({model.n_binaries} binaries)")
        return 0

    if args.mode == "ccga":
        result = ccga_mod.run_ccga(grid, d, cfg, backend)
    elif args.mode == "repair":
        if not args.model:
            raise UsageError("--model is required for mode=repair")
        model = learner.load_model(args.model)
        pred = learner.predict(model, grid, d)
        result = ccga_mod.run_fr_ccga(grid, d, pred.g, cfg, backend)
    elif args.mode == "race":
        if not args.model:
            raise UsageError("--model is required for mode=race")
        model = learner.load_model(args.model)
        pred = learner.predict(model, grid, d)
        trace = ccga_mod.run_bounds_race(grid, d, pred.g, cfg,
                                         (HighsBackend(), HighsBackend()))
        ccga_mod.write_gap_csv(trace, out / "gap_trace.csv")
        print(f"race {trace.status}: LB={trace.lb:.4f} UB={trace.ub:.4f} "
              f"gap={trace.gap:.6f}; trace at {out / 'gap_trace.csv'}")
        return 0 if trace.status in ("gap_closed", "finished") else 1
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown mode {args.mode}")

    if args.trace:
        ccga_mod.write_trace_csv(result, out / "trace.csv")
    _write_solution(out / "solution.json", grid, result.g,
                    objective=result.objective, status=result.status,
                    phi=result.phi, iterations=result.iterations,
                    distance=result.distance)
    print(f"{args.mode}: status={result.status} objective={result.objective:.4f} "
          f"phi={result.phi:.4f} MW iterations={result.iterations}")
    return 0 if result.status == "optimal" else 1


def _write_solution(path: Path, grid: Grid, g, **extra) -> None:
    payload = {"generators": list(grid.gen_ids), "g": np.asarray(g).tolist()}
    payload.update({k: v for k, v in extra.items() if v is not None})
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    grid = _read_grid(args.grid)
    p = Path(args.model)
    if not p.exists():
        raise UsageError(f"model file not found: {p}")
    model = learner.load_model(p)
    if model.grid_fingerprint != grid.fingerprint():
        raise UsageError("model fingerprint does not match this grid")
    dataset = _read_dataset(args.dataset)
    if args.n_instances < 1:
        raise UsageError("--n-instances must be >= 1")
    cfg = _ccga_config(args, config)
    out = _out_dir(args)
    rows, failures = metrics.run_bench(
        grid, model, dataset, args.n_instances, args.seed or 0, cfg, HighsBackend()
    )
    if not rows:
        print("no instance succeeded; nothing to report", file=sys.stderr)
        return 1
    report = metrics.aggregate(rows, n_failed=len(failures))
    metrics.write_rows_csv(rows, out / "bench_rows.csv")
    text = metrics.format_report(report)
    (out / "bench_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"rows at {out / 'bench_rows.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scopf",
        description="Security-constrained OPF with automatic primary response: "
                    "data generation, training, solving and benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML file with default settings")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)

    def ccga_flags(p):
        p.add_argument("--epsilon", type=float, default=None, help="line violation tolerance (MW)")
        p.add_argument("--beta", type=float, default=None, help="cut addition threshold (MW)")
        p.add_argument("--rel-gap", dest="rel_gap", type=float, default=None)
        p.add_argument("--time-limit", dest="time_limit", type=float, default=None)
        p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate and label a dataset")
    p.add_argument("grid")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    ccga_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a dispatch predictor")
    p.add_argument("dataset")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--baseline-only", action="store_true",
                   help="single training pass, no contingency constraints added")
    p.add_argument("--allow-unconverged", action="store_true")
    p.add_argument("--inner-steps", dest="inner_steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--alpha-hi", dest="alpha_hi", type=float, default=None)
    p.add_argument("--alpha-lo", dest="alpha_lo", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--jmax", type=int, default=None)
    p.add_argument("--epsilon-mw", dest="epsilon_mw", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta-c", dest="beta_c", type=float, default=None)
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.add_argument("--hidden-widths", dest="hidden_widths", default=None,
                   help="comma separated, e.g. 108,108,108,108")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="evaluate a trained model on one load")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--load", required=True)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("grid")
    p.add_argument("--load", required=True)
    p.add_argument("--mode", choices=("extensive", "ccga", "repair", "race"),
                   default="ccga")
    p.add_argument("--model", default=None)
    p.add_argument("--trace", action="store_true", help="write iteration trace CSV")
    p.add_argument("--export-lp", dest="export_lp", action="store_true")
    common(p)
    ccga_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="benchmark prediction + recovery against exact solves")
    p.add_argument("grid")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-instances", dest="n_instances", type=int, default=200)
    common(p)
    ccga_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MasterInfeasibleError, BackendFailureError, TrainingDivergedError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
