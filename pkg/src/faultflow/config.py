"""TOML run configuration.

Sections: ``[mesh]``, ``[fault]``, ``[materials]``, ``[bc]``, ``[solver]``,
``[transient]`` plus the optional ``[convergence]``, ``[sweep]`` and
``[exact]``.  Quantities are SI (m, m^2, Pa, Pa.s, 1/Pa, s).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli

from .scenario import (ADJACENT, Affine, BoundaryCondition, FaultSpec, Materials, MaterialBand, MeshSpec,
                       Profile, ScenarioSpec, TransientSpec)

SECONDS_PER_YEAR = 365.25 * 24 * 3600


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "direct"
    mode: str = "virtual"
    condense: bool = True
    rtol: float = 1e-12
    restart: int = 30
    maxiter: int = 2000
    ilu_drop: float = 1e-4
    ilu_fill: float = 10.0

    def solve_kwargs(self, kind: str | None = None) -> dict:
        kw = dict(condense=self.condense, rtol=self.rtol, maxiter=self.maxiter)
        if (kind or self.kind) == "gmres":
            kw.update(restart=self.restart, ilu_drop=self.ilu_drop, ilu_fill=self.ilu_fill)
        return kw


@dataclass(frozen=True)
class RunConfig:
    path: Path
    scenario: ScenarioSpec
    solver: SolverConfig
    levels: tuple = ()
    reference: MeshSpec | None = None
    reference_solver: str = "amg"
    sweep: tuple = ()
    raw: dict = field(default_factory=dict)

    def level_specs(self):
        return [self.scenario.mesh.refined(f) for f in self.levels]

    def sweep_specs(self):
        """Right-block refinements of the base mesh (mesh ratio sweep)."""
        m = self.scenario.mesh
        return [replace(m, nx_right=(m.nx_right or m.nx_left) * r, ny_right=(m.ny_right or m.ny_left) * r)
                for r in self.sweep]


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what}: expected a number, got {v!r}")
    return float(v)


def _profile(v, what):
    if isinstance(v, str):
        if v != ADJACENT:
            raise ConfigError(f"{what}: unknown keyword {v!r}")
        return v
    if isinstance(v, dict):
        bands = tuple((_number(b[0], what), _number(b[1], what), _number(b[2], what)) for b in v.get("bands", ()))
        return Profile(_number(v.get("default"), what), bands)
    return Profile(_number(v, what))


def _fault_value(v, what):
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError(f"{what}: per-layer values need exactly two entries")
        return tuple(_profile(x, what) for x in v)
    return _profile(v, what)


def _tensor(v, what):
    a = np.asarray(v, dtype=float)
    if a.shape not in ((), (2,), (2, 2)):
        raise ConfigError(f"{what}: permeability must be a number, [kx, ky] or a 2x2 matrix")
    return a


def _bc(v, tag):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return BoundaryCondition("dirichlet", float(v))
    if not isinstance(v, dict):
        raise ConfigError(f"bc.{tag}: expected a number or a table")
    kind = v.get("type", "dirichlet")
    value = v.get("value", 0.0)
    if isinstance(value, dict):
        value = Affine(tuple(float(g) for g in value.get("gradient", (0.0, 0.0))), float(value.get("value", 0.0)))
    else:
        value = _number(value, f"bc.{tag}.value")
    try:
        return BoundaryCondition(kind, value)
    except ValueError as exc:
        raise ConfigError(f"bc.{tag}: {exc}") from exc


def _mesh(d: dict) -> MeshSpec:
    kind = d.get("kind", "cartesian")
    if kind == "cartesian":
        nx, ny = d.get("nx", 16), d.get("ny", d.get("nx", 16))
        kw = dict(nx_left=int(nx), ny_left=int(ny))
    elif kind == "two_block":
        missing = [k for k in ("nx_left", "ny_left", "nx_right", "ny_right") if k not in d]
        if missing:
            raise ConfigError(f"mesh: two_block needs {', '.join(missing)}")
        kw = {k: int(d[k]) for k in ("nx_left", "ny_left", "nx_right", "ny_right")}
    else:
        raise ConfigError(f"mesh: unknown mesh kind {kind!r}")
    for k, v in kw.items():
        if v < 1:
            raise ConfigError(f"mesh.{k} must be at least 1")
    return MeshSpec(kind, bbox=tuple(float(b) for b in d.get("bbox", (0.0, 0.0, 1.0, 1.0))),
                    split_x=float(d.get("split_x", 0.5)), offset=float(d.get("offset", 0.0)), **kw)


def _transient(d: dict) -> TransientSpec:
    unit = SECONDS_PER_YEAR * 1e6 if d.get("time_unit", "s") == "My" else 1.0
    if "dt" in d:
        dt = tuple(float(t) * unit for t in d["dt"])
        offsets = tuple(float(o) for o in d.get("offsets", [0.0] * len(dt)))
    else:
        steps = int(d.get("steps", 0))
        t0, t1 = float(d.get("t_start", 0.0)) * unit, float(d.get("t_end", 0.0)) * unit
        dt = (t1 - t0) / steps if steps else 0.0
        dt = tuple([dt] * steps)
        end = float(d.get("offset_end", 0.0))
        offsets = tuple(end * (k + 1) / steps for k in range(steps))
    init = {tag: _bc(v, tag) for tag, v in d.get("initial_bc", {}).items()}
    return TransientSpec(dt, offsets, init, float(d.get("near_fault_width", 0.0)))


def parse_config(doc: dict, path: Path | str = "<memory>") -> RunConfig:
    try:
        mesh = _mesh(doc.get("mesh", {}))
        fd = doc.get("fault", {})
        cphi = fd.get("cphi", ADJACENT)
        fault = FaultSpec(
            thickness=_number(fd.get("thickness", 1e-2), "fault.thickness"),
            lam_n=_fault_value(fd.get("lam_n", 1.0), "fault.lam_n"),
            lam_tau=_fault_value(fd.get("lam_tau", 1.0), "fault.lam_tau"),
            cphi=cphi if isinstance(cphi, str) else _number(cphi, "fault.cphi"),
            source=_number(fd.get("source", 0.0), "fault.source"),
        )
        md = doc.get("materials", {})
        bands = tuple(MaterialBand(float(b["y_lo"]), float(b["y_hi"]), _tensor(b["perm"], "materials.bands.perm"),
                                   None if "cphi" not in b else float(b["cphi"]), b.get("subdomain"))
                      for b in md.get("bands", ()))
        materials = Materials(_tensor(md.get("perm", 1.0), "materials.perm"), float(md.get("cphi", 0.0)),
                              _number(md.get("viscosity", 1.0), "materials.viscosity"),
                              _number(md.get("source", 0.0), "materials.source"), bands)
        if materials.viscosity <= 0:
            raise ConfigError("materials.viscosity must be positive")
        bc = {tag: _bc(v, tag) for tag, v in doc.get("bc", {}).items()}
        sd = doc.get("solver", {})
        solver = SolverConfig(sd.get("kind", "direct"), sd.get("mode", "virtual"), bool(sd.get("condense", True)),
                              float(sd.get("rtol", 1e-12)), int(sd.get("restart", 30)), int(sd.get("maxiter", 2000)),
                              float(sd.get("ilu_drop", 1e-4)), float(sd.get("ilu_fill", 10.0)))
        if solver.kind not in ("direct", "gmres", "amg"):
            raise ConfigError(f"solver.kind: unknown solver {solver.kind!r}")
        if solver.mode not in ("reduced", "virtual"):
            raise ConfigError(f"solver.mode: unknown mode {solver.mode!r}")
        exact = None
        if "exact" in doc:
            e = doc["exact"]
            exact = Affine(tuple(float(g) for g in e.get("gradient", (0.0, 0.0))), float(e.get("value", 0.0)))
        transient = _transient(doc["transient"]) if "transient" in doc else None
        scenario = ScenarioSpec(doc.get("name", Path(str(path)).stem), mesh, materials, fault, bc,
                                float(sd.get("alpha", 1.0)), float(sd.get("alpha_hat", 1.0)), transient, exact)
        cd = doc.get("convergence", {})
        levels = tuple(int(f) for f in cd.get("factors", ()))
        reference = _mesh(cd["reference"]) if "reference" in cd else None
        if any(f < 1 for f in levels):
            raise ConfigError("convergence.factors must be at least 1")
        sweep = tuple(int(r) for r in doc.get("sweep", {}).get("right_refinement", ()))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(Path(str(path)), scenario, solver, levels, reference, cd.get("reference_solver", "amg"),
                     sweep, doc)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path)
