"""Command line entry point.

    faultflow run|convergence|transient|check CONFIG [--out DIR] [--mode M] [--solver S]

Exit codes: 0 success, 2 configuration or validation error, 3 solver
failure, 4 property failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CheckResult, check_min_max, convergence_study, run_checks, solve_scenario
from .config import ConfigError, RunConfig, load_config
from .io import write_csv, write_manifest, write_vtk_fault, write_vtk_mesh
from .scenario import ScenarioError
from .system import SolverError, fault_cell_xy, physical_x, recover_fluxes, run_transient

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PROPERTY = 4

log = logging.getLogger("faultflow")


def _solver_kwargs(cfg: RunConfig, solver: str) -> dict:
    return cfg.solver.solve_kwargs(solver)


def _interface_rows(fault, state, flux):
    part = fault.partition
    p1, p2 = state.fault_cell(0), state.fault_cell(1)
    rows = []
    for k in range(part.n_faces):
        c1, c2 = part.cell1[k], part.cell2[k]
        jump = p2[c2] - p1[c1] if c1 >= 0 and c2 >= 0 else float("nan")
        rows.append(dict(y_lo=part.y_lo[k], y_hi=part.y_hi[k], jump=jump, u_n=flux.u_n[k]))
    return rows


def _fault_rows(fault, state):
    rows = []
    for j, layer in enumerate(fault.layers):
        for y, p in zip(layer.centers, state.fault_cell(j)):
            rows.append(dict(layer=layer.layer, y=y, pressure=p))
    return rows


def _write_steady(out: Path, stem: str, mesh, fault, state, flux):
    write_vtk_mesh(out / f"{stem}.vtk", mesh, {"pressure": state.cell, "velocity": flux.cell_velocity})
    write_vtk_fault(out / f"{stem}_fault.vtk", fault.layers, [lay.x for lay in fault.layers],
                    {"pressure": state.fault_cells})
    write_csv(out / f"{stem}_fault.csv", _fault_rows(fault, state), ["layer", "y", "pressure"])
    write_csv(out / f"{stem}_interface.csv", _interface_rows(fault, state, flux), ["y_lo", "y_hi", "jump", "u_n"])


def max_error(scenario, mesh, fault, state) -> float:
    """Largest deviation of cell, face and fault cell values from ``scenario.exact``."""
    d = fault.geometry.thickness
    exact = scenario.exact
    err = np.abs(state.cell - exact(physical_x(mesh, mesh.cell_center, mesh.cell_subdomain, d))).max()
    side = mesh.cell_subdomain[mesh.face_cells[:, 0]]
    err = max(err, np.abs(state.face - exact(physical_x(mesh, mesh.face_center, side, d))).max())
    for j in range(2):
        err = max(err, np.abs(state.fault_cell(j) - exact(fault_cell_xy(fault, j))).max())
    return float(err)


def _steady_summary(label, mesh, state, report, flux, error=""):
    return dict(case=label, n_cells=mesh.n_cells, h_D=mesh.h, theta=mesh.theta, n_dofs=report.n_dofs,
                n_unknowns=report.n_unknowns, iterations=report.iterations, residual=report.residual,
                p_min=float(state.values.min()), p_max=float(state.values.max()),
                conservation=flux.conservation_defect, balance=flux.balance_defect, max_error=error)


SUMMARY_COLUMNS = ["case", "n_cells", "h_D", "theta", "n_dofs", "n_unknowns", "iterations", "residual",
                   "p_min", "p_max", "conservation", "balance", "max_error"]


def cmd_run(cfg: RunConfig, out: Path, mode: str, solver: str) -> tuple[int, dict]:
    sc = cfg.scenario
    cases = [("base", sc)]
    if cfg.sweep:
        cases = [(f"ratio_{r}", sc.with_mesh(m)) for r, m in zip(cfg.sweep, cfg.sweep_specs())]
    rows = []
    bounded = True
    for label, case in cases:
        mesh, fault, system, state, report = solve_scenario(case, mode, solver, **_solver_kwargs(cfg, solver))
        flux = recover_fluxes(state, mesh, fault, case, system)
        _write_steady(out, label, mesh, fault, state, flux)
        error = max_error(case, mesh, fault, state) if case.exact is not None else ""
        rows.append(_steady_summary(label, mesh, state, report, flux, error))
        bounded &= bool(np.all(np.isfinite(state.values)))
        log.info("%s: %d unknowns, residual %.2e", label, report.n_unknowns, report.residual)
    write_csv(out / "summary.csv", rows, SUMMARY_COLUMNS)
    return (EXIT_OK if bounded else EXIT_PROPERTY), {"cases": [r["case"] for r in rows]}


def cmd_convergence(cfg: RunConfig, out: Path, mode: str, solver: str) -> tuple[int, dict]:
    if not cfg.levels or cfg.reference is None:
        raise ConfigError("convergence needs [convergence] factors and a reference mesh")
    report = convergence_study(cfg.scenario, cfg.level_specs(), cfg.reference, mode, solver, cfg.reference_solver)
    write_csv(out / "convergence.csv", list(report.rows()),
              ["level", "h_D", "theta", "err_matrix", "err_fault", "eoc_matrix", "eoc_fault"])
    for row in report.rows():
        log.info("level %d h=%.4g err=%.4e / %.4e", row["level"], row["h_D"], row["err_matrix"], row["err_fault"])
    em, ef = report.eoc_matrix, report.eoc_fault
    return EXIT_OK, {"eoc_matrix_last": float(em[-1]) if len(em) else None,
                     "eoc_fault_last": float(ef[-1]) if len(ef) else None,
                     "study_time": report.wall_time}


def _near_fault(mesh, width: float) -> np.ndarray:
    if width <= 0:
        return np.ones(mesh.n_cells, dtype=bool)
    return np.abs(mesh.cell_center[:, 0] - mesh.split_x) < width


def transient_rows(result, width: float = 0.0):
    rows = []
    for k, (state, mesh) in enumerate(zip(result.states, result.meshes)):
        cells = np.concatenate([state.cell, state.fault_cells])
        near = state.cell[_near_fault(mesh, width)]
        rows.append(dict(step=k, time=result.times[k], offset=result.offsets[k],
                         p_min=float(cells.min()), p_max=float(cells.max()),
                         near_min=float(near.min()), near_mean=float(near.mean()),
                         all_min=float(state.values.min()), all_max=float(state.values.max())))
    return rows


TRANSIENT_COLUMNS = ["step", "time", "offset", "p_min", "p_max", "near_min", "near_mean", "all_min", "all_max"]


def cmd_transient(cfg: RunConfig, out: Path, mode: str, solver: str) -> tuple[int, dict]:
    sc = cfg.scenario
    if sc.transient is None:
        raise ConfigError("transient needs a [transient] section")
    result = run_transient(sc, mode, solver, **_solver_kwargs(cfg, solver))
    for k, (state, mesh, fault) in enumerate(zip(result.states, result.meshes, result.faults)):
        write_vtk_mesh(out / f"step_{k:04d}.vtk", mesh, {"pressure": state.cell})
        write_vtk_fault(out / f"step_{k:04d}_fault.vtk", fault.layers, [lay.x for lay in fault.layers],
                        {"pressure": state.fault_cells})
    rows = transient_rows(result, sc.transient.near_fault_width)
    write_csv(out / "summary.csv", rows, TRANSIENT_COLUMNS)
    return EXIT_OK, {"steps": len(rows) - 1}


def cmd_check(cfg: RunConfig, out: Path, mode: str | None, solver: str) -> tuple[int, dict]:
    sc = cfg.scenario
    results = run_checks([sc], alpha_hat=sc.alpha_hat, modes=None if mode is None else (mode,))
    try:
        lo_hi = sc.bc_range()
    except ScenarioError:
        lo_hi = None
    if lo_hi is not None and sc.materials.source == 0 and sc.fault.source == 0:
        modes = (mode,) if mode else ("virtual",)
        for m in modes:
            name = f"min/max principle [{sc.name}, {m}]"
            try:
                _, _, _, state, _ = solve_scenario(sc, m, solver, **_solver_kwargs(cfg, solver))
            except SolverError as exc:
                results.append(CheckResult(name, False, float("nan"), str(exc)))
                continue
            ok = check_min_max(state, lo_hi)
            results.append(CheckResult(name, ok, float(state.values.min()),
                                       f"range [{state.values.min():.6g}, {state.values.max():.6g}]"))
    rows = [dict(name=r.name, passed=r.passed, value=r.value, detail=r.detail) for r in results]
    write_csv(out / "checks.csv", rows, ["name", "passed", "value", "detail"])
    failed = [r.name for r in results if not r.passed]
    for r in results:
        log.info("%s %s (%.4g) %s", "PASS" if r.passed else "FAIL", r.name, r.value, r.detail)
    if failed:
        print("failed invariants: " + "; ".join(failed), file=sys.stderr)
    return (EXIT_PROPERTY if failed else EXIT_OK), {"failed": failed}


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence, "transient": cmd_transient, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faultflow", description="Darcy flow through a thin fault, hybrid finite volumes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (default: out/<config name>)")
    p.add_argument("--mode", choices=("reduced", "virtual"), default=None)
    p.add_argument("--solver", choices=("direct", "gmres", "amg"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        solver = args.solver or cfg.solver.kind
        mode = args.mode or cfg.solver.mode
        if args.mode:
            cfg = replace(cfg, solver=replace(cfg.solver, mode=args.mode))
        out = args.out or Path("out") / cfg.scenario.name
        out.mkdir(parents=True, exist_ok=True)
        # the check suite picks its modes from the grid unless one is forced
        cmd_mode = args.mode if args.command == "check" else mode
        code, extra = COMMANDS[args.command](cfg, out, cmd_mode, solver)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out / "manifest.json", cfg.raw,
                   {"command": args.command, "mode": mode, "solver": solver, "exit_code": code,
                    "wall_time": time.perf_counter() - t0, **extra})
    return code


if __name__ == "__main__":
    sys.exit(main())
