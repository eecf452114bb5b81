"""Error norms, convergence rates and executable property checks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import hfv
from .fault import FaultLayerGrid
from .mesh import Mesh
from .scenario import MeshSpec, ScenarioSpec
from .system import (FaultModel, HybridState, SolverError, assemble_steady, build_fault_model, recover_fluxes,
                     solve_steady)


class AnalysisError(ValueError):
    pass


# reference transfer ------------------------------------------------------------

def _nested_index(fine_edges, coarse_edges, what):
    scale = max(1.0, float(np.abs(coarse_edges).max()))
    pos = np.searchsorted(fine_edges, coarse_edges - 1e-9 * scale)
    pos = np.minimum(pos, len(fine_edges) - 1)
    if np.any(np.abs(fine_edges[pos] - coarse_edges) > 1e-9 * scale):
        raise AnalysisError(f"{what}: the fine grid does not nest in the coarse grid")


def interpolate_reference(fine_values: np.ndarray, fine_mesh: Mesh, coarse_mesh: Mesh) -> np.ndarray:
    """Area-weighted average of fine cell values over each coarse cell."""
    fine_values = np.asarray(fine_values, dtype=float)
    out = np.empty(coarse_mesh.n_cells)
    for cb in coarse_mesh.blocks:
        fbs = [b for b in fine_mesh.blocks if b.subdomain == cb.subdomain]
        if len(fbs) != 1 or abs(fbs[0].offset - cb.offset) > 1e-12:
            raise AnalysisError(f"no matching fine block for subdomain {cb.subdomain}")
        fb = fbs[0]
        _nested_index(fb.x_edges, cb.x_edges, "x")
        _nested_index(fb.y_edges, cb.y_edges, "y")
        cells = np.arange(fb.cell_start, fb.cell_start + fb.n_cells)
        c = fine_mesh.cell_center[cells]
        i = np.searchsorted(cb.x_edges, c[:, 0]) - 1
        j = np.searchsorted(cb.y_edges, c[:, 1]) - 1
        target = j * cb.nx + i
        area = fine_mesh.cell_area[cells]
        num = np.bincount(target, area * fine_values[cells], minlength=cb.n_cells)
        den = np.bincount(target, area, minlength=cb.n_cells)
        out[cb.cell_start:cb.cell_start + cb.n_cells] = num / den
    return out


def interpolate_reference_fault(fine_values: np.ndarray, fine_layer: FaultLayerGrid,
                                coarse_layer: FaultLayerGrid) -> np.ndarray:
    """Length-weighted average of fine layer values over each coarse layer cell."""
    _nested_index(fine_layer.nodes, coarse_layer.nodes, "fault layer")
    target = coarse_layer.locate(fine_layer.centers)
    if np.any(target < 0):
        raise AnalysisError("fine fault layer extends beyond the coarse one")
    w = fine_layer.lengths
    num = np.bincount(target, w * fine_values, minlength=coarse_layer.n_cells)
    den = np.bincount(target, w, minlength=coarse_layer.n_cells)
    return num / den


def l2_error_matrix(values, reference, mesh_or_areas) -> float:
    area = mesh_or_areas.cell_area if isinstance(mesh_or_areas, Mesh) else np.asarray(mesh_or_areas)
    diff = np.asarray(values, dtype=float) - np.asarray(reference, dtype=float)
    return float(np.sqrt(np.sum(area * diff ** 2)))


def l2_error_fault(values, reference, layers) -> float:
    """Both layers summed; ``values``/``reference`` are per-layer sequences."""
    total = 0.0
    for v, r, lay in zip(values, reference, layers):
        w = lay.lengths if isinstance(lay, FaultLayerGrid) else np.asarray(lay)
        total += np.sum(w * (np.asarray(v) - np.asarray(r)) ** 2)
    return float(np.sqrt(total))


def relative_l2(a, b, area) -> float:
    return l2_error_matrix(a, b, area) / l2_error_matrix(b, np.zeros_like(b), area)


def eoc(errors, h_values) -> np.ndarray:
    """Slopes log(e_i/e_{i+1}) / log(h_i/h_{i+1}); +inf when an error vanishes."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(h_values, dtype=float)
    if len(e) < 2 or len(e) != len(h):
        raise AnalysisError("need at least two levels with matching h")
    if np.any(np.diff(h) >= 0):
        raise AnalysisError("h must be strictly decreasing")
    out = np.full(len(e) - 1, np.inf)
    ok = (e[:-1] > 0) & (e[1:] > 0)
    out[ok] = np.log(e[:-1][ok] / e[1:][ok]) / np.log(h[:-1][ok] / h[1:][ok])
    return out


# convergence ---------------------------------------------------------------

@dataclass
class ErrorReport:
    h: list = field(default_factory=list)
    err_matrix: list = field(default_factory=list)
    err_fault: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    n_dofs: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def eoc_matrix(self) -> np.ndarray:
        return eoc(self.err_matrix, self.h)

    @property
    def eoc_fault(self) -> np.ndarray:
        return eoc(self.err_fault, self.h)

    def rows(self):
        em, ef = self.eoc_matrix, self.eoc_fault
        for k in range(len(self.h)):
            yield dict(level=k, h_D=self.h[k], err_matrix=self.err_matrix[k], err_fault=self.err_fault[k],
                       eoc_matrix="" if k == 0 else em[k - 1], eoc_fault="" if k == 0 else ef[k - 1],
                       theta=self.theta[k])


def solve_scenario(scenario: ScenarioSpec, mode: str = "virtual", solver: str = "direct", mesh: Mesh | None = None,
                   **kw):
    """Build, assemble and solve; returns (mesh, fault, system, state, report)."""
    mesh = scenario.mesh.build() if mesh is None else mesh
    fault = build_fault_model(mesh, scenario)
    system = assemble_steady(mesh, fault, scenario, mode)
    state, report = solve_steady(system, solver, **kw)
    return mesh, fault, system, state, report


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    mesh: Mesh
    fault: FaultModel
    cells: np.ndarray
    layers: tuple


def reference_solution(scenario: ScenarioSpec, reference: MeshSpec, mode: str = "virtual",
                       solver: str = "amg") -> ReferenceSolution:
    """Fine solution kept for error evaluation (cell and fault cell values only)."""
    mesh, fault, _, state, _ = solve_scenario(scenario.with_mesh(reference), mode, solver)
    return ReferenceSolution(mesh, fault, state.cell.copy(), tuple(state.fault_cell(j).copy() for j in range(2)))


def convergence_study(scenario: ScenarioSpec, levels, reference: MeshSpec | ReferenceSolution,
                      mode: str = "virtual", solver: str = "direct", reference_solver: str = "amg") -> ErrorReport:
    """Errors of each level against a fine nested reference solution."""
    t0 = time.perf_counter()
    if not isinstance(reference, ReferenceSolution):
        reference = reference_solution(scenario, reference, mode, reference_solver)
    fine_mesh, fine_fault = reference.mesh, reference.fault
    fine_cells, fine_layers = reference.cells, reference.layers
    report = ErrorReport()
    specs = sorted(levels, key=lambda s: -s.build().h)
    for spec in specs:
        mesh, fault, _, state, _ = solve_scenario(scenario.with_mesh(spec), mode, solver)
        ref = interpolate_reference(fine_cells, fine_mesh, mesh)
        ref_f = [interpolate_reference_fault(fine_layers[j], fine_fault.layers[j], fault.layers[j])
                 for j in range(2)]
        report.h.append(mesh.h)
        report.theta.append(mesh.theta)
        report.err_matrix.append(l2_error_matrix(state.cell, ref, mesh))
        report.err_fault.append(l2_error_fault([state.fault_cell(j) for j in range(2)], ref_f, fault.layers))
        report.n_dofs.append(state.layout.size)
    report.wall_time = time.perf_counter() - t0
    return report


# property checks -----------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


def check_min_max(state: HybridState, bc_range, tol: float = 1e-12, cells_only: bool = False) -> bool:
    """All unknowns (or only matrix and fault cell values) inside ``bc_range``."""
    lo, hi = bc_range
    v = np.concatenate([state.cell, state.fault_cells]) if cells_only else state.values
    return bool(v.min() >= lo - tol and v.max() <= hi + tol)


def tangential_gradient_error(layer: FaultLayerGrid, phi, dphi, alpha_hat: float = 1.0, samples: int = 9) -> float:
    """max over cones of the sup-norm gap between the cone gradient of P phi and phi'."""
    cones = hfv.cones_from_layer(layer)
    v = hfv.project_pointwise(cones, lambda x: phi(x[:, 0]))
    g = hfv.cone_gradients(cones, v, alpha_hat)[:, 0]
    a = cones.cell_center[cones.cone_cell, 0]
    b = cones.face_center[:, 0]
    t = np.linspace(0.0, 1.0, samples)
    y = a[:, None] + t[None, :] * (b - a)[:, None]
    return float(np.abs(g[:, None] - dphi(y)).max())


def check_gradient_consistency(layers, phi, dphi, alpha_hat: float = 1.0, band=(1.67, 2.4)):
    """Errors on a halving family; returns (errors, ratios, passed)."""
    errors = np.array([tangential_gradient_error(lay, phi, dphi, alpha_hat) for lay in layers])
    if np.all(errors <= 1e-12):
        return errors, np.full(len(errors) - 1, np.inf), True
    ratios = errors[:-1] / errors[1:]
    return errors, ratios, bool(np.all((ratios >= band[0]) & (ratios <= band[1])))


def _energy_and_seminorm_matrices(cones: hfv.ConeSet, alpha: float):
    n_c, n_f = cones.n_cells, cones.n_faces
    n = n_c + n_f
    A = hfv.assemble_operator(cones, 1.0, alpha, np.arange(n_c), n_c + np.arange(n_f), n).toarray()
    w = cones.face_measure / cones.dist
    B = np.zeros((n, n))
    k, f = cones.cone_cell, n_c + cones.face
    np.add.at(B, (k, k), w)
    np.add.at(B, (f, f), w)
    np.add.at(B, (k, f), -w)
    np.add.at(B, (f, k), -w)
    return A, B


def _boundary_labels(cones: hfv.ConeSet) -> np.ndarray:
    counts = np.bincount(cones.face, minlength=cones.n_faces)
    return np.flatnonzero(counts == 1)


def norm_equivalence(cones: hfv.ConeSet, alpha: float = 1.0, n_samples: int = 100, seed: int = 0):
    """Ratios ||grad_D v|| / |v|_{V_D} over V_{D,0}.

    Returns (sampled min, sampled max, exact min, exact max); the exact
    bounds come from the generalized eigenvalues of the two quadratic forms.
    """
    A, B = _energy_and_seminorm_matrices(cones, alpha)
    fixed = cones.n_cells + _boundary_labels(cones)
    free = np.setdiff1d(np.arange(A.shape[0]), fixed)
    A, B = A[np.ix_(free, free)], B[np.ix_(free, free)]
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((len(free), n_samples))
    r = np.sqrt(np.einsum("in,ij,jn->n", V, A, V) / np.einsum("in,ij,jn->n", V, B, V))
    lam = sla.eigh(A, B, eigvals_only=True)
    lam = np.clip(lam, 0.0, None)
    return float(r.min()), float(r.max()), float(np.sqrt(lam.min())), float(np.sqrt(lam.max()))


def check_norm_equivalence(layers, alpha_hat: float = 1.0, drift: float = 1.5, n_samples: int = 100, seed: int = 0):
    """Bounds on each layer of a refinement family; stable and bounded away from 0."""
    bounds = [norm_equivalence(hfv.cones_from_layer(lay), alpha_hat, n_samples, seed) for lay in layers]
    lo = np.array([b[2] for b in bounds])
    hi = np.array([b[3] for b in bounds])
    passed = bool(np.all(lo > 1e-8) and lo.max() / max(lo.min(), 1e-300) <= drift and hi.max() / hi.min() <= drift)
    return bounds, passed


def mode_difference(scenario: ScenarioSpec, solver: str = "direct") -> float:
    """Relative L2 gap of matrix pressures between the two coupling modes."""
    out = {}
    for mode in ("reduced", "virtual"):
        mesh, _, _, state, _ = solve_scenario(scenario, mode, solver)
        out[mode] = state.cell
    return relative_l2(out["reduced"], out["virtual"], mesh.cell_area)


def conservation_checks(scenario: ScenarioSpec, mode: str = "virtual", solver: str = "direct"):
    """(local defect, global defect, symmetry defect, min pivot) for one scenario."""
    mesh, fault, system, state, report = solve_scenario(scenario, mode, solver)
    flux = recover_fluxes(state, mesh, fault, scenario, system)
    A = system.matrix
    asym = abs(A - A.T).max() / abs(A).max()
    return flux.conservation_defect, flux.balance_defect, float(asym), report.min_pivot


def layer_family(n0: int, levels: int, y_range=(0.0, 1.0)):
    """Uniform fault layer grids with n0, 2 n0, ... cells (no matrix attached)."""
    out = []
    for k in range(levels):
        n = n0 * 2 ** k
        nodes = np.linspace(*y_range, n + 1)
        out.append(FaultLayerGrid(1, 0.5, np.arange(n), np.arange(n), nodes))
    return out


def run_checks(scenarios, alpha_hat: float = 1.0, n_samples: int = 100, seed: int = 0, tol: float = 1e-10,
               modes=None):
    """Lemma and conservation suite; one CheckResult per property.

    ``modes`` defaults to both coupling modes on matching grids and the
    virtual mode otherwise.
    """
    results = []
    fam = layer_family(4, 4)
    bounds, ok = check_norm_equivalence(fam, alpha_hat, n_samples=n_samples, seed=seed)
    lo = min(b[2] for b in bounds)
    results.append(CheckResult("norm equivalence", ok, lo,
                               "exact bounds per level: " + ", ".join(f"[{b[2]:.4g}, {b[3]:.4g}]" for b in bounds)))
    errs, ratios, ok = check_gradient_consistency(fam, lambda y: y ** 2, lambda y: 2 * y, alpha_hat)
    results.append(CheckResult("gradient consistency", ok, float(np.min(ratios)),
                               "ratios " + ", ".join(f"{r:.4g}" for r in ratios)))
    for sc in scenarios:
        if modes is None:
            matching = build_fault_model(sc.mesh.build(), sc).partition.is_matching
            sc_modes = ("reduced", "virtual") if matching else ("virtual",)
        else:
            sc_modes = tuple(modes)
        if len(sc_modes) == 2:
            try:
                gap = mode_difference(sc)
                results.append(CheckResult(f"mode equivalence [{sc.name}]", gap <= 1e-6, gap))
            except SolverError as exc:
                results.append(CheckResult(f"mode equivalence [{sc.name}]", False, float("nan"), str(exc)))
        for mode in sc_modes:
            try:
                local, glob, asym, piv = conservation_checks(sc, mode)
            except SolverError as exc:
                results.append(CheckResult(f"positive pivots [{sc.name}, {mode}]", False, float("nan"), str(exc)))
                continue
            results.append(CheckResult(f"local conservativity [{sc.name}, {mode}]", local <= tol, local))
            results.append(CheckResult(f"global balance [{sc.name}, {mode}]", glob <= tol, glob))
            results.append(CheckResult(f"symmetry [{sc.name}, {mode}]", asym <= 1e-13, asym))
            results.append(CheckResult(f"positive pivots [{sc.name}, {mode}]", piv is not None and piv > 0,
                                       piv if piv is not None else float("nan")))
    return results
