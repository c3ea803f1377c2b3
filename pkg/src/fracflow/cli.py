"""Command line entry point.

    fracflow solve CONFIG [--output-dir DIR]
    fracflow verify RUN_DIR [--skip-resolve]
    fracflow refine CONFIG [--output-dir DIR]
    fracflow contract CONFIG [--output-dir DIR]
    fracflow oracle [--s S --spacing DX --dimension N --h H --u0 U --f F --steps M --csv PATH]

Exit codes: 0 ok, 2 configuration or input error, 3 solver failure,
4 invariant violation.  ``FRACFLOW_LOG_LEVEL`` sets the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import RunConfig, load_config, read_field_csv
from .diagnostics import (EnergyLedger, check_energy_chain, check_nested, check_sup_bound,
                          contraction_check, holder_quotient, refinement_study, time_derivative_norm)
from .energy import StepData
from .grid import GridSpec, assemble_kernel, build_grid
from .io import (snapshot_path, versions, write_field_csv, write_json_atomic, write_rows_csv,
                 write_sign_field_csv)
from .rothe import RotheFailure, StepRecord, TimeGrid, Trajectory, run_rothe, steklov_average
from .step import SignField, StepFailure, soft_threshold_oracle, solve_step

log = logging.getLogger("fracflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4
SIGN_BOUND = 1e-10


class ConfigError(Exception):
    pass


def _load(path) -> RunConfig:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except ValidationError as exc:
        parts = []
        for e in exc.errors():
            loc = ".".join(str(x) for x in e["loc"]) or "config"
            parts.append(f"{loc}: {e['msg']}")
        raise ConfigError("; ".join(parts))


def _build(cfg: RunConfig, base: Path):
    try:
        return cfg.build(base)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc))


def _out_dir(cfg: RunConfig, config_path: Path, override: str | None) -> Path:
    # relative output paths are taken relative to the config file
    if override:
        return Path(override)
    p = Path(cfg.output_dir)
    return p if p.is_absolute() else config_path.parent / p


def _check(value: float, bound: float) -> dict:
    return {"value": float(value), "bound": float(bound), "pass": bool(value <= bound)}


def trajectory_checks(traj: Trajectory, K, tol: float, ledger: EnergyLedger | None = None) -> dict:
    """In-run invariants: energy margins, Hoelder bound, sign-field feasibility, residuals."""
    ledger = ledger or check_energy_chain(traj, K)
    w12 = time_derivative_norm(traj)
    hq = holder_quotient(traj)
    checks = {
        "energy_chain": _check(-float(ledger.margin_chain[1:].min(initial=0.0)), tol * ledger.scale),
        "energy_l2": _check(-float(ledger.margin_l2[1:].min(initial=0.0)), tol * ledger.scale),
        "holder": _check(hq**2 - w12, tol * max(1.0, w12)),
        "sign_bound": _check(max(z.max_abs() for z in traj.sign_fields) - 1.0, SIGN_BOUND),
        "antisymmetry": _check(0.0 if all(z.is_antisymmetric() for z in traj.sign_fields) else 1.0, 0.0),
    }
    if traj.steps:
        checks["weak_residual"] = _check(max(r.weak_residual for r in traj.steps), tol)
    if traj.source.kind == "zero":
        checks["seminorm_nonincreasing"] = _check(float(np.diff(ledger.seminorm).max(initial=0.0)),
                                                  tol * ledger.scale)
    return checks


def _summary(traj: Trajectory, K) -> dict:
    return {"sup_bound": check_sup_bound(traj, K), "time_derivative_norm": time_derivative_norm(traj),
            "holder_quotient": holder_quotient(traj)}


def _write_trajectory(out: Path, traj: Trajectory, grid, z_steps) -> None:
    for k, u in enumerate(traj.snapshots):
        write_field_csv(snapshot_path(out, k), u, grid)
    traj.ledger.to_csv(out / "ledger.csv")
    for k in z_steps:
        if 0 <= k <= traj.m:
            write_sign_field_csv(out / "z" / f"z_{k:04d}.csv", traj.sign_fields[k])


def _manifest(cfg, command: str, started: float, status: str, **extra) -> dict:
    d = {"command": command, "status": status, "config": json.loads(cfg.model_dump_json()) if cfg else None,
         "versions": versions(), "wall_time": time.time() - started}
    d.update(extra)
    return d


def cmd_solve(config_path, output_dir: str | None = None) -> int:
    started = time.time()
    config_path = Path(config_path)
    cfg = _load(config_path)
    if cfg.m is None:
        raise ConfigError("m: required for solve")
    grid, K, u0, src, opts = _build(cfg, config_path.parent)
    out = _out_dir(cfg, config_path, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.model_copy(update={"output_dir": str(out)})
    if cfg.u0.preset == "file":
        # freeze the initial datum inside the run directory
        write_field_csv(out / "u0_input.csv", u0, grid)
        resolved = resolved.model_copy(update={"u0": cfg.u0.model_copy(update={
            "path": str((out / "u0_input.csv").resolve())})})
    (out / "config.json").write_text(resolved.model_dump_json(indent=2) + "\n")
    tg = TimeGrid(cfg.T, cfg.m)
    try:
        traj = run_rothe(u0, src, tg, K, opts, cfg.solver.method)
    except RotheFailure as exc:
        for k, u in enumerate(exc.partial):
            write_field_csv(snapshot_path(out, k), u, grid)
        write_json_atomic(out / "manifest.json", _manifest(
            resolved, "solve", started, "solver_failure",
            failure={"step": exc.k, "solver": exc.cause.solver, "residual": exc.cause.residual,
                     "message": str(exc)}))
        log.error("%s", exc)
        return EXIT_SOLVER
    _write_trajectory(out, traj, grid, cfg.z_steps)
    checks = trajectory_checks(traj, K, cfg.tolerance, traj.ledger)
    ok = all(c["pass"] for c in checks.values())
    write_json_atomic(out / "manifest.json", _manifest(
        resolved, "solve", started, "ok" if ok else "invariant_violation",
        iterations=[r.iterations for r in traj.steps],
        weak_residuals=[r.weak_residual for r in traj.steps],
        slackness=[r.slackness for r in traj.steps],
        margins={"min_margin_chain": float(traj.ledger.margin_chain[1:].min(initial=0.0)),
                 "min_margin_l2": float(traj.ledger.margin_l2[1:].min(initial=0.0)), "scale": traj.ledger.scale},
        summary=_summary(traj, K), checks=checks, passed=ok))
    log.info("solve: %d steps, %s", tg.m, "ok" if ok else "invariant violation")
    return EXIT_OK if ok else EXIT_INVARIANT


def load_run(run_dir: Path):
    """Rebuild ``(cfg, grid, K, src, opts, snapshots)`` from a run directory."""
    run_dir = Path(run_dir)
    if not (run_dir / "config.json").is_file():
        raise ConfigError(f"{run_dir}: no config.json, not a run directory")
    cfg = _load(run_dir / "config.json")
    if cfg.m is None:
        raise ConfigError(f"{run_dir}: config has no m")
    grid, K, u0, src, opts = _build(cfg, run_dir)
    snaps = []
    for k in range(cfg.m + 1):
        p = snapshot_path(run_dir, k)
        if not p.is_file():
            raise ConfigError(f"{run_dir}: missing snapshot {p.name}")
        try:
            snaps.append(read_field_csv(p, grid.size))
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"unreadable snapshot: {exc}")
    return cfg, grid, K, u0, src, opts, np.array(snaps)


def cmd_verify(run_dir, skip_resolve: bool = False) -> int:
    started = time.time()
    run_dir = Path(run_dir)
    cfg, grid, K, u0, src, opts, snaps = load_run(run_dir)
    tg = TimeGrid(cfg.T, cfg.m)
    tol = cfg.tolerance
    zs = [SignField.from_signs(snaps[0])]
    deviations = []
    records = []
    for k in range(1, tg.m + 1):
        f_k = steklov_average(src, tg.h, tg.knot(k - 1), grid)
        step = StepData(snaps[k - 1], f_k, tg.h)
        if skip_resolve:
            zs.append(SignField.from_signs(snaps[k]))
            continue
        try:
            sol = solve_step(step, K, opts, cfg.solver.method)
        except StepFailure as exc:
            log.error("step %d: %s", k, exc)
            return EXIT_SOLVER
        zs.append(sol.z)
        scale = max(1.0, float(np.abs(sol.u).max()))
        deviations.append(float(np.abs(sol.u - snaps[k]).max()) / scale)
        records.append(StepRecord(k, sol.iterations, sol.weak_residual, sol.slackness,
                                  sol.duality_gap, sol.objective, sol.solver_tag))
    snaps.setflags(write=False)
    traj = Trajectory(tg, snaps, zs, src, grid, records)
    traj.ledger = check_energy_chain(traj, K)
    checks = trajectory_checks(traj, K, tol, traj.ledger)
    checks["initial_datum"] = _check(float(np.abs(snaps[0] - u0).max()), 0.0)
    if deviations:
        checks["resolve_deviation"] = _check(max(deviations), tol)
    ok = all(c["pass"] for c in checks.values())
    for name, c in checks.items():
        if not c["pass"]:
            log.error("verify: %s failed (%.3e > %.3e)", name, c["value"], c["bound"])
    write_json_atomic(run_dir / "verify.json", _manifest(
        cfg, "verify", started, "ok" if ok else "invariant_violation", checks=checks, passed=ok))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_refine(config_path, output_dir: str | None = None) -> int:
    started = time.time()
    config_path = Path(config_path)
    cfg = _load(config_path)
    if not cfg.m_list:
        raise ConfigError("m_list: required for refine")
    try:
        check_nested(cfg.m_list)
    except ValueError as exc:
        raise ConfigError(f"m_list: {exc}")
    grid, K, u0, src, opts = _build(cfg, config_path.parent)
    out = _out_dir(cfg, config_path, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        table = refinement_study(u0, src, cfg.T, cfg.m_list, K, opts, cfg.solver.method)
    except RotheFailure as exc:
        write_json_atomic(out / "refinement.json", _manifest(
            cfg, "refine", started, "solver_failure", failure={"step": exc.k, "message": str(exc)}))
        log.error("%s", exc)
        return EXIT_SOLVER
    write_rows_csv(out / "refinement.csv", ["m", "difference", "sup_energy", "w12"],
                   [[r.m, math.nan if r.difference is None else r.difference, r.sup_energy, r.w12]
                    for r in table.rows])
    curves = []
    ms = [r.m for r in table.rows]
    for a, b in zip(ms, ms[1:]):
        ta, tb = table.trajectories[a], table.trajectories[b]
        step = b // a
        for k in range(a + 1):
            d = tb.snapshots[k * step] - ta.snapshots[k]
            curves.append([a, b, ta.timegrid.knot(k), float(np.sqrt(K.volume * d @ d))])
    write_rows_csv(out / "refinement_curves.csv", ["m_coarse", "m_fine", "t", "difference"], curves)
    # nonincreasing up to the step solver's accuracy
    slack = opts.residual_tol * max(1.0, float(np.sqrt(K.volume * u0 @ u0)))
    ok = table.nonincreasing(slack)
    checks = {}
    for m, tr in table.trajectories.items():
        for name, c in trajectory_checks(tr, K, cfg.tolerance, tr.ledger).items():
            checks[f"m{m}_{name}"] = c
    ok = ok and all(c["pass"] for c in checks.values())
    write_json_atomic(out / "refinement.json", _manifest(
        cfg, "refine", started, "ok" if ok else "invariant_violation", table=table.to_dict(),
        nonincreasing_slack=slack, checks=checks, passed=ok))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_contract(config_path, output_dir: str | None = None) -> int:
    started = time.time()
    config_path = Path(config_path)
    cfg = _load(config_path)
    if cfg.m is None:
        raise ConfigError("m: required for contract")
    if cfg.u0_alt is None:
        raise ConfigError("u0_alt: required for contract")
    grid, K, u0, src, opts = _build(cfg, config_path.parent)
    try:
        u0b = cfg.u0_alt.build(grid, cfg.seed + 1, config_path.parent)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"u0_alt: {exc}")
    out = _out_dir(cfg, config_path, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tg = TimeGrid(cfg.T, cfg.m)
    try:
        ta = run_rothe(u0, src, tg, K, opts, cfg.solver.method)
        tb = run_rothe(u0b, src, tg, K, opts, cfg.solver.method)
    except RotheFailure as exc:
        write_json_atomic(out / "contraction.json", _manifest(
            cfg, "contract", started, "solver_failure", failure={"step": exc.k, "message": str(exc)}))
        log.error("%s", exc)
        return EXIT_SOLVER
    rep = contraction_check(ta, tb)
    write_rows_csv(out / "contraction.csv", ["k", "t", "gap"],
                   [[k, tg.knot(k), g] for k, g in enumerate(rep.gaps)])
    ok = rep.passes(cfg.tolerance)
    write_json_atomic(out / "contraction.json", _manifest(
        cfg, "contract", started, "ok" if ok else "invariant_violation", report=rep.to_dict(), passed=ok))
    return EXIT_OK if ok else EXIT_INVARIANT


def oracle_table(s: float, spacing: float, dimension: int, h: float, u0: float, f: float, steps: int):
    """Rows ``(k, t, u_k)`` of the iterated single-cell shrinkage and the threshold ``2bh/v``."""
    spec = GridSpec(dimension, 1, spacing)
    grid = build_grid(spec)
    K = assemble_kernel(grid, s, spec)
    b, v = float(K.exterior_weights[0]), K.volume
    u = float(u0)
    rows = [(0, 0.0, u)]
    for k in range(1, steps + 1):
        u = soft_threshold_oracle(u + h * f, b, h, v)
        rows.append((k, k * h, u))
    return rows, 2.0 * b * h / v, b


def cmd_oracle(args) -> int:
    if not (0 < args.s < 1 and args.spacing > 0 and args.h > 0 and args.steps >= 0):
        log.error("oracle: need 0 < s < 1, spacing > 0, h > 0, steps >= 0")
        return EXIT_CONFIG
    rows, tau, b = oracle_table(args.s, args.spacing, args.dimension, args.h, args.u0, args.f, args.steps)
    print(f"# single cell: s={args.s} dx={args.spacing} N={args.dimension} h={args.h} "
          f"b={b:.17g} threshold={tau:.17g}")
    print("k,t,u")
    for k, t, u in rows:
        print(f"{k},{t:.17g},{u:.17g}")
    if args.csv:
        write_rows_csv(Path(args.csv), ["k", "t", "u"], [[k, float(t), float(u)] for k, t, u in rows])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracflow", description="Rothe solver for the fractional 1-Laplacian flow")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"solve": "run one trajectory and write snapshots, ledger and manifest",
             "refine": "run the nested m_list and tabulate differences between levels",
             "contract": "run u0 and u0_alt with the same source and compare"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--output-dir", default=None)
    p = sub.add_parser("verify", help="re-check a persisted run directory")
    p.add_argument("run_dir")
    p.add_argument("--skip-resolve", action="store_true", help="check margins only, do not re-solve steps")
    p = sub.add_parser("oracle", help="print the single-cell shrinkage table")
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--dimension", type=int, choices=(1, 2), default=1)
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--u0", type=float, default=1.0)
    p.add_argument("--f", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--csv", default=None)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("FRACFLOW_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.output_dir)
        if args.command == "verify":
            return cmd_verify(args.run_dir, args.skip_resolve)
        if args.command == "refine":
            return cmd_refine(args.config, args.output_dir)
        if args.command == "contract":
            return cmd_contract(args.config, args.output_dir)
        return cmd_oracle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
