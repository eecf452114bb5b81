"""Global discrete problem: assembly, boundary conditions, solvers, fluxes.

Unknowns are laid out as

    [matrix cells | matrix faces | fault cells (layer 1, 2) |
     fault nodes (layer 1, 2) | interface sub-faces (virtual mode only)]

Two coupling modes are available.  ``reduced`` adds the tangential fault
energy and the interface coupling form with one-point quadrature and
needs matching layer grids.  ``virtual`` extrudes the fault cells and
treats them with the ordinary hybrid scheme, which also works for
non-matching grids.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import hfv
from .fault import (MID, TRACE, LAYER, EffectiveCoefficients, FaultGeometry, FaultLayerGrid,
                    InterfacePartition, effective_coefficients, extract_layer_grids, extrude_virtual_cells,
                    fault_geometry, intersect_partitions)
from .mesh import Mesh
from .scenario import ADJACENT, FAULT_TAGS, MATRIX_TAGS, ScenarioSpec

log = logging.getLogger(__name__)

MODES = ("reduced", "virtual")


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, dof=None, residuals=None):
        super().__init__(message)
        self.dof = dof
        self.residuals = residuals


# fault model ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FaultModel:
    """Fault geometry, layer grids, interface partition and per-cell coefficients."""

    geometry: FaultGeometry
    layers: tuple
    partition: InterfacePartition
    lam_n: tuple
    lam_tau: tuple
    cphi: tuple
    source: float = 0.0

    @property
    def coefficients(self) -> tuple:
        d = self.geometry.thickness
        return tuple(effective_coefficients(self.lam_n[j], self.lam_tau[j], d) for j in range(2))

    @property
    def n_cells(self) -> tuple:
        return tuple(lay.n_cells for lay in self.layers)

    def volumes(self, layer: int) -> np.ndarray:
        return 0.5 * self.geometry.thickness * self.layers[layer].lengths

    def permeability(self, layer: int) -> np.ndarray:
        """Fault tensor diag(lam_n, lam_tau) per cell of a layer."""
        out = np.zeros((self.layers[layer].n_cells, 2, 2))
        out[:, 0, 0] = self.lam_n[layer]
        out[:, 1, 1] = self.lam_tau[layer]
        return out


def _block_offset(mesh: Mesh, side: int) -> float:
    for b in mesh.blocks:
        if b.subdomain == side:
            return b.offset
    return 0.0


def build_fault_model(mesh: Mesh, scenario: ScenarioSpec, *, neutral: bool = False) -> FaultModel:
    """Evaluate fault data on the layer grids of ``mesh``.

    With ``neutral`` the fault copies the permeability of the adjacent
    matrix cells whatever the scenario says.
    """
    spec = scenario.fault
    geom = fault_geometry(mesh, spec.thickness)
    layers = extract_layer_grids(mesh, geom)
    part = intersect_partitions(*layers)
    mat = scenario.materials
    perm = mat.cell_perm(mesh)
    cphi_cells = mat.cell_cphi(mesh)
    lam_n, lam_tau, cphi = [], [], []
    for j, layer in enumerate(layers):
        y = layer.centers - _block_offset(mesh, layer.layer)
        adj = layer.matrix_cells
        vals = []
        for name, comp in (("lam_n", 0), ("lam_tau", 1)):
            prof = ADJACENT if neutral else spec.layer_profile(name, layer.layer)
            if prof == ADJACENT:
                vals.append(perm[adj, comp, comp].copy())
            else:
                vals.append(prof(y) / mat.viscosity)
        lam_n.append(vals[0])
        lam_tau.append(vals[1])
        c = spec.cphi
        cphi.append(cphi_cells[adj].copy() if c == ADJACENT else np.full(layer.n_cells, float(c)))
    return FaultModel(geom, layers, part, tuple(lam_n), tuple(lam_tau), tuple(cphi), spec.source)


# dof layout ----------------------------------------------------------------

@dataclass(frozen=True)
class DofLayout:
    n_cells: int
    n_faces: int
    n_fault: tuple
    n_mid: int

    @property
    def face_start(self) -> int:
        return self.n_cells

    # layers are indexed 0 and 1 here
    def fault_cell_start(self, layer: int) -> int:
        return self.n_cells + self.n_faces + (self.n_fault[0] if layer == 1 else 0)

    def fault_node_start(self, layer: int) -> int:
        base = self.n_cells + self.n_faces + sum(self.n_fault)
        return base + (self.n_fault[0] + 1 if layer == 1 else 0)

    @property
    def mid_start(self) -> int:
        return self.n_cells + self.n_faces + 2 * sum(self.n_fault) + 2

    @property
    def size(self) -> int:
        return self.mid_start + self.n_mid

    def fault_cells(self, layer: int) -> np.ndarray:
        return self.fault_cell_start(layer) + np.arange(self.n_fault[layer])

    def fault_nodes(self, layer: int) -> np.ndarray:
        return self.fault_node_start(layer) + np.arange(self.n_fault[layer] + 1)

    def cell_like(self, mode: str) -> np.ndarray:
        """Dofs whose diagonal block is diagonal and can be condensed."""
        cells = np.arange(self.n_cells)
        if mode == "virtual":
            cells = np.concatenate([cells, self.fault_cells(0), self.fault_cells(1)])
        return cells


def layout_for(mesh: Mesh, fault: FaultModel, mode: str) -> DofLayout:
    n_mid = fault.partition.n_faces if mode == "virtual" else 0
    return DofLayout(mesh.n_cells, mesh.n_faces, fault.n_cells, n_mid)


# assembled system -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Sparse symmetric system.

    Before :func:`apply_dirichlet` the matrix spans every unknown and ``free``
    is ``None``; afterwards it spans ``free`` only and ``lift`` holds the
    prescribed values on the full vector.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: DofLayout
    mode: str
    dirichlet: np.ndarray
    values: np.ndarray
    free: np.ndarray | None = None
    full_matrix: sp.csr_matrix | None = None
    full_rhs: np.ndarray | None = None

    @property
    def n_dofs(self) -> int:
        return self.layout.size


def physical_x(mesh: Mesh, xy: np.ndarray, side: np.ndarray, d: float) -> np.ndarray:
    """Coordinates with the right block moved away by the fault thickness."""
    out = np.array(xy, dtype=float)
    out[side == 2, 0] += d
    return out


def _face_side(mesh: Mesh) -> np.ndarray:
    return mesh.cell_subdomain[mesh.face_cells[:, 0]]


def _node_xy(fault: FaultModel, layer: FaultLayerGrid) -> np.ndarray:
    g = fault.geometry
    x = g.x + (0.25 if layer.layer == 1 else 0.75) * g.thickness
    return np.column_stack([np.full(layer.n_faces, x), layer.nodes])


def fault_cell_xy(fault: FaultModel, layer: int) -> np.ndarray:
    lay = fault.layers[layer]
    g = fault.geometry
    x = g.x + (0.25 if lay.layer == 1 else 0.75) * g.thickness
    return np.column_stack([np.full(lay.n_cells, x), lay.centers])


def _coupling(fault: FaultModel, layout: DofLayout) -> sp.csr_matrix:
    part = fault.partition
    if not part.is_matching:
        raise AssemblyError("reduced coupling needs matching layer grids; "
                            f"got {fault.layers[0].n_cells} and {fault.layers[1].n_cells} fault cells "
                            f"on {part.n_faces} interface sub-faces, use the virtual mode")
    c1, c2 = fault.coefficients
    k1, k2 = part.cell1, part.cell2
    ell = part.lengths
    g1, g2 = c1.lam_gamma[k1], c2.lam_gamma[k2]
    p1 = layout.fault_cell_start(0) + k1
    p2 = layout.fault_cell_start(1) + k2
    s1 = layout.face_start + fault.layers[0].trace_faces[k1]
    s2 = layout.face_start + fault.layers[1].trace_faces[k2]
    pairs = [(s1, p1, 2 * g1 * ell), (s2, p2, 2 * g2 * ell), (p1, p2, ell * 2 * g1 * g2 / (g1 + g2))]
    rows, cols, vals = [], [], []
    for a, b, t in pairs:
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [t, t, -t, -t]
    n = layout.size
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def virtual_grid(fault: FaultModel):
    perm = np.concatenate([fault.permeability(0), fault.permeability(1)])
    return extrude_virtual_cells(fault.layers, fault.partition, fault.geometry, perm)


def _virtual_labels(grid, fault: FaultModel, layout: DofLayout) -> np.ndarray:
    kind = grid.cone_kind
    ref = grid.cone_ref
    layer = grid.cell_layer[grid.cone_cell]
    lab = np.empty(len(kind), dtype=np.int64)
    lab[kind == TRACE] = layout.face_start + ref[kind == TRACE]
    for j in (1, 2):
        sel = (kind == LAYER) & (layer == j)
        lab[sel] = layout.fault_node_start(j - 1) + ref[sel]
    lab[kind == MID] = layout.mid_start + ref[kind == MID]
    return lab


def _matrix_cones(mesh: Mesh) -> hfv.ConeSet:
    return hfv.cones_from_mesh(mesh)


def _boundary_data(mesh: Mesh, fault: FaultModel, scenario: ScenarioSpec, layout: DofLayout):
    n = layout.size
    mask = np.zeros(n, dtype=bool)
    values = np.zeros(n)
    rhs = np.zeros(n)
    d = fault.geometry.thickness
    side = _face_side(mesh)
    for tag in MATRIX_TAGS:
        faces = mesh.faces_with_tag(tag)
        if len(faces) == 0:
            continue
        bc = scenario.condition(tag)
        xy = physical_x(mesh, mesh.face_center[faces], side[faces], d)
        v = bc.evaluate(xy)
        dofs = layout.face_start + faces
        if bc.is_dirichlet:
            mask[dofs] = True
            values[dofs] = v
        else:
            rhs[dofs] -= v * mesh.face_length[faces]
    for j, layer in enumerate(fault.layers):
        xy = _node_xy(fault, layer)
        for tag, node in zip(FAULT_TAGS, (0, layer.n_faces - 1)):
            bc = scenario.condition(tag)
            v = bc.evaluate(xy[node:node + 1])[0]
            dof = layout.fault_node_start(j) + node
            if bc.is_dirichlet:
                mask[dof] = True
                values[dof] = v
            else:
                rhs[dof] -= v
    return mask, values, rhs


def assemble_steady(mesh: Mesh, fault: FaultModel, scenario: ScenarioSpec, mode: str = "virtual") -> GlobalSystem:
    """Assemble the full (Dirichlet rows included) symmetric system."""
    if mode not in MODES:
        raise AssemblyError(f"unknown mode {mode!r}")
    layout = layout_for(mesh, fault, mode)
    n = layout.size
    identity = np.arange(n)
    cones = _matrix_cones(mesh)
    perm = scenario.materials.cell_perm(mesh)
    A = hfv.assemble_operator(cones, perm, scenario.alpha, np.arange(mesh.n_cells),
                              layout.face_start + np.arange(mesh.n_faces), n)
    if mode == "reduced":
        for j, layer in enumerate(fault.layers):
            coef = fault.coefficients[j]
            A = A + hfv.assemble_operator(hfv.cones_from_layer(layer), coef.lam_hat, scenario.alpha_hat,
                                          layout.fault_cells(j), layout.fault_nodes(j), n)
        A = A + _coupling(fault, layout)
    else:
        grid = virtual_grid(fault)
        cones_v = hfv.cones_from_virtual(grid, _virtual_labels(grid, fault, layout))
        cell_dofs = np.concatenate([layout.fault_cells(0), layout.fault_cells(1)])
        A = A + hfv.assemble_operator(cones_v, grid.permeability, scenario.alpha, cell_dofs, identity, n)
    mask, values, rhs = _boundary_data(mesh, fault, scenario, layout)
    d = fault.geometry.thickness
    xy = physical_x(mesh, mesh.cell_center, mesh.cell_subdomain, d)
    rhs[:mesh.n_cells] += scenario.materials.cell_source(mesh, xy) * mesh.cell_area
    if fault.source:
        for j in range(2):
            rhs[layout.fault_cells(j)] += fault.source * fault.volumes(j)
    A = A.tocsr()
    A.sum_duplicates()
    return GlobalSystem(A, rhs, layout, mode, mask, values)


def apply_dirichlet(system: GlobalSystem, scenario: ScenarioSpec | None = None) -> GlobalSystem:
    """Eliminate prescribed unknowns symmetrically."""
    if system.free is not None:
        return system
    free = np.flatnonzero(~system.dirichlet)
    fixed = np.flatnonzero(system.dirichlet)
    A = system.matrix
    Aff = A[free][:, free]
    rhs = system.rhs[free] - A[free][:, fixed] @ system.values[fixed]
    return replace(system, matrix=Aff.tocsr(), rhs=rhs, free=free,
                   full_matrix=system.matrix, full_rhs=system.rhs)


def add_mass(system: GlobalSystem, diag: np.ndarray, previous: np.ndarray) -> GlobalSystem:
    """Add a lumped mass ``diag`` (full layout) with previous values to an unreduced system."""
    if system.free is not None:
        raise AssemblyError("add mass before eliminating Dirichlet unknowns")
    M = sp.diags(diag, format="csr")
    return replace(system, matrix=(system.matrix + M).tocsr(), rhs=system.rhs + diag * previous)


# solving -------------------------------------------------------------------

@dataclass(frozen=True)
class SolveReport:
    solver: str
    n_dofs: int
    n_unknowns: int
    condensed: bool
    residual: float
    iterations: int = 0
    min_pivot: float | None = None
    max_pivot: float | None = None
    fill: int | None = None
    wall_time: float = 0.0
    residual_history: tuple = ()


@dataclass(frozen=True, eq=False)
class HybridState:
    layout: DofLayout
    values: np.ndarray
    mode: str

    @property
    def cell(self) -> np.ndarray:
        return self.values[:self.layout.n_cells]

    @property
    def face(self) -> np.ndarray:
        return self.values[self.layout.face_start:self.layout.face_start + self.layout.n_faces]

    def fault_cell(self, layer: int) -> np.ndarray:
        return self.values[self.layout.fault_cells(layer)]

    def fault_node(self, layer: int) -> np.ndarray:
        return self.values[self.layout.fault_nodes(layer)]

    @property
    def mid(self) -> np.ndarray:
        return self.values[self.layout.mid_start:]

    @property
    def fault_cells(self) -> np.ndarray:
        return np.concatenate([self.fault_cell(0), self.fault_cell(1)])


def _condense(A: sp.csr_matrix, b: np.ndarray, elim: np.ndarray):
    keep = np.setdiff1d(np.arange(A.shape[0]), elim)
    Acc = A[elim][:, elim]
    off = Acc - sp.diags(Acc.diagonal())
    if off.count_nonzero():
        raise AssemblyError("condensed block is not diagonal")
    dinv = 1.0 / Acc.diagonal()
    Akc = A[keep][:, elim]
    S = (A[keep][:, keep] - Akc @ sp.diags(dinv) @ Akc.T).tocsr()
    rhs = b[keep] - Akc @ (dinv * b[elim])
    return S, rhs, keep, Akc, dinv


def _direct(S: sp.csr_matrix):
    lu = spla.splu(S.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    piv = lu.U.diagonal()
    bad = np.flatnonzero(~(piv > 0))
    if len(bad):
        # column perm_c[i] of the factor comes from unknown i
        dof = int(np.flatnonzero(lu.perm_c == bad[0])[0])
        raise SolverError(f"non-positive pivot {piv[bad[0]]:.3e} at unknown {dof}", dof=dof)
    return lu, piv


def _gmres(S, rhs, restart, maxiter, rtol, ilu_drop, ilu_fill):
    ilu = spla.spilu(S.tocsc(), drop_tol=ilu_drop, fill_factor=ilu_fill)
    M = spla.LinearOperator(S.shape, ilu.solve)
    history = []
    x, info = spla.gmres(S, rhs, M=M, rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter,
                         callback=lambda r: history.append(float(r)), callback_type="pr_norm")
    return x, info, history, ilu


def _amg(S, rhs, rtol, maxiter):
    # only used for large reference solutions where a direct factorization does not fit in memory
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(S, symmetry="symmetric")
    history = []
    y = ml.solve(rhs, tol=rtol, accel="cg", maxiter=maxiter, residuals=history)
    if not np.linalg.norm(S @ y - rhs) <= 100 * rtol * np.linalg.norm(rhs):
        raise SolverError(f"AMG-CG stalled at relative residual {history[-1] / history[0]:.3e}",
                          residuals=history)
    return y, history


def solve_steady(system: GlobalSystem, solver: str = "direct", *, condense: bool = True,
                 restart: int = 30, maxiter: int = 2000, rtol: float = 1e-12,
                 ilu_drop: float = 1e-4, ilu_fill: float = 10.0):
    """Solve and return (HybridState, SolveReport).

    ``solver`` is ``direct`` (sparse LU with symmetric pivoting), ``gmres``
    (restarted GMRES with an incomplete LU preconditioner, ``maxiter``
    counts restart cycles) or ``amg`` (conjugate gradients with an algebraic
    multigrid preconditioner, meant for fine reference grids).
    ``condense`` eliminates cell unknowns with diagonal blocks first.
    """
    t0 = time.perf_counter()
    red = apply_dirichlet(system)
    A, b = red.matrix, red.rhs
    free = red.free
    if condense:
        elim_global = np.intersect1d(red.layout.cell_like(red.mode), free)
        elim = np.searchsorted(free, elim_global)
        S, rhs, keep, Akc, dinv = _condense(A, b, elim)
    else:
        S, rhs, keep = A, b, np.arange(len(b))
    info = dict(iterations=0, residual_history=())
    if solver == "direct":
        lu, piv = _direct(S)
        y = lu.solve(rhs)
        info.update(min_pivot=float(piv.min()) if len(piv) else None,
                    max_pivot=float(piv.max()) if len(piv) else None,
                    fill=int(lu.L.nnz + lu.U.nnz))
    elif solver == "gmres":
        y, flag, history, ilu = _gmres(S, rhs, restart, maxiter, rtol, ilu_drop, ilu_fill)
        info.update(iterations=len(history), residual_history=tuple(history),
                    fill=int(ilu.L.nnz + ilu.U.nnz))
        if flag != 0:
            raise SolverError(f"GMRES did not converge in {len(history)} iterations, "
                              f"last preconditioned residual {history[-1] if history else float('nan'):.3e}",
                              residuals=history)
    elif solver == "amg":
        y, history = _amg(S, rhs, rtol, maxiter)
        info.update(iterations=len(history) - 1, residual_history=tuple(history))
    else:
        raise SolverError(f"unknown solver {solver!r}")
    x = np.empty(len(b))
    x[keep] = y
    if condense:
        x[elim] = dinv * (b[elim] - Akc.T @ y)
    full = red.values.copy()
    full[free] = x
    res = np.linalg.norm(A @ x - b)
    scale = np.linalg.norm(b) or 1.0
    report = SolveReport(solver, red.n_dofs, S.shape[0], condense, float(res / scale),
                         wall_time=time.perf_counter() - t0, **info)
    log.debug("solved %d unknowns (%s), residual %.2e", S.shape[0], solver, report.residual)
    return HybridState(red.layout, full, red.mode), report


# fluxes --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FluxField:
    """One-sided fluxes and their balances.

    ``matrix_cone`` holds the outward flux of every matrix cone (total, not
    per length).  ``face_flux`` is the flux per unit length of each matrix
    face along the outward normal of its first cell.  ``u_n`` is the flux
    per unit length from layer 1 to layer 2 on each interface sub-face.
    ``dof_balance`` sums every outward one-sided flux landing on each
    unknown; on interior faces it must vanish.
    """

    matrix_cone: np.ndarray
    face_flux: np.ndarray
    cell_velocity: np.ndarray
    u_n: np.ndarray
    dof_balance: np.ndarray
    max_flux: float
    source_total: float
    neumann_outflow: float
    dirichlet_outflow: float
    interior_dofs: np.ndarray = field(repr=False, default=None)

    @property
    def conservation_defect(self) -> float:
        """Largest interior imbalance relative to the largest one-sided flux."""
        if len(self.interior_dofs) == 0 or self.max_flux == 0:
            return 0.0
        return float(np.abs(self.dof_balance[self.interior_dofs]).max() / self.max_flux)

    @property
    def balance_defect(self) -> float:
        """|outflow through the boundary - total source| relative to the flux scale."""
        scale = max(self.max_flux, abs(self.source_total), 1e-300)
        return abs(self.dirichlet_outflow + self.neumann_outflow - self.source_total) / scale


def cell_velocity(cones: hfv.ConeSet, cone_flux: np.ndarray) -> np.ndarray:
    rel = cones.face_center - cones.cell_center[cones.cone_cell]
    w = cone_flux[:, None] * rel
    out = np.zeros((cones.n_cells, cones.dim))
    for k in range(cones.dim):
        out[:, k] = np.bincount(cones.cone_cell, w[:, k], minlength=cones.n_cells)
    return out / cones.cell_measure[:, None]


def recover_fluxes(state: HybridState, mesh: Mesh, fault: FaultModel, scenario: ScenarioSpec,
                   system: GlobalSystem | None = None) -> FluxField:
    layout = state.layout
    n = layout.size
    u = state.values
    balance = np.zeros(n)
    cones = _matrix_cones(mesh)
    perm = scenario.materials.cell_perm(mesh)
    cone_flux = hfv.local_fluxes(cones, hfv.HybridValues(state.cell, state.face), perm, scenario.alpha)
    balance += np.bincount(layout.face_start + cones.face, cone_flux, minlength=n)
    fluxes = [cone_flux]
    part = fault.partition
    if state.mode == "reduced":
        for j, layer in enumerate(fault.layers):
            c = hfv.cones_from_layer(layer)
            f = hfv.local_fluxes(c, hfv.HybridValues(state.fault_cell(j), state.fault_node(j)),
                                 fault.coefficients[j].lam_hat, scenario.alpha_hat)
            balance += np.bincount(layout.fault_node_start(j) + c.face, f, minlength=n)
            fluxes.append(f)
        k1, k2 = part.cell1, part.cell2
        c1, c2 = fault.coefficients
        ell = part.lengths
        p1, p2 = state.fault_cell(0)[k1], state.fault_cell(1)[k2]
        s1 = layout.face_start + fault.layers[0].trace_faces[k1]
        s2 = layout.face_start + fault.layers[1].trace_faces[k2]
        f1 = 2 * c1.lam_gamma[k1] * ell * (p1 - u[s1])
        f2 = 2 * c2.lam_gamma[k2] * ell * (p2 - u[s2])
        g = 2 * c1.lam_gamma[k1] * c2.lam_gamma[k2] / (c1.lam_gamma[k1] + c2.lam_gamma[k2])
        u_n = g * (p1 - p2)
        np.add.at(balance, s1, f1)
        np.add.at(balance, s2, f2)
        fluxes += [f1, f2, u_n * ell]
    else:
        grid = virtual_grid(fault)
        labels = _virtual_labels(grid, fault, layout)
        cv = hfv.cones_from_virtual(grid, labels)
        f = hfv.local_fluxes(cv, hfv.HybridValues(state.fault_cells, u), grid.permeability, scenario.alpha)
        balance += np.bincount(labels, f, minlength=n)
        fluxes.append(f)
        u_n = np.zeros(part.n_faces)
        mid = grid.cone_kind == MID
        layer = grid.cell_layer[grid.cone_cell]
        for j, sign in ((1, 1.0), (2, -1.0)):
            sel = mid & (layer == j)
            ref = grid.cone_ref[sel]
            only = (part.cell1 < 0) if j == 2 else np.ones(part.n_faces, dtype=bool)
            take = only[ref]
            u_n[ref[take]] = sign * f[sel][take] / part.lengths[ref[take]]
    max_flux = max(float(np.abs(v).max()) if len(v) else 0.0 for v in fluxes)
    # sources and Neumann data
    if system is None:
        system = assemble_steady(mesh, fault, scenario, state.mode)
    full_rhs = system.rhs if system.free is None else system.full_rhs
    mask = system.dirichlet
    src = np.zeros(n)
    src[:layout.n_cells] = full_rhs[:layout.n_cells]
    for j in range(2):
        src[layout.fault_cells(j)] = full_rhs[layout.fault_cells(j)]
    cells = np.zeros(n, dtype=bool)
    cells[layout.cell_like("virtual")] = True
    neumann_rhs = np.where(cells | mask, 0.0, full_rhs)
    # each free face unknown balances its Neumann data: sum of outward fluxes = -g|sigma|
    face_balance = balance - neumann_rhs
    interior = np.flatnonzero(~mask & ~cells)
    face_flux = np.zeros(mesh.n_faces)
    owner = np.repeat(np.arange(mesh.n_cells), np.diff(mesh.cell_face_ptr))
    is_first = owner == mesh.face_cells[mesh.cell_faces, 0]
    face_flux[mesh.cell_faces[is_first]] = cone_flux[is_first] / mesh.face_length[mesh.cell_faces[is_first]]
    return FluxField(
        matrix_cone=cone_flux,
        face_flux=face_flux,
        cell_velocity=cell_velocity(cones, cone_flux),
        u_n=u_n,
        dof_balance=face_balance,
        max_flux=max_flux,
        source_total=float(src.sum()),
        neumann_outflow=float(-neumann_rhs.sum()),
        dirichlet_outflow=float(balance[mask].sum()),
        interior_dofs=interior,
    )


# transient -----------------------------------------------------------------

def mass_diagonal(mesh: Mesh, fault: FaultModel, scenario: ScenarioSpec, layout: DofLayout, dt: float) -> np.ndarray:
    diag = np.zeros(layout.size)
    diag[:mesh.n_cells] = scenario.materials.cell_cphi(mesh) * mesh.cell_area / dt
    for j in range(2):
        diag[layout.fault_cells(j)] = fault.cphi[j] * fault.volumes(j) / dt
    return diag


def assemble_transient_step(previous: HybridState, dt: float, mesh: Mesh, fault: FaultModel,
                            scenario: ScenarioSpec, mode: str = "virtual") -> GlobalSystem:
    """Implicit Euler step on the geometry of this step, cells matched by identity."""
    if not dt > 0:
        raise AssemblyError(f"time step must be positive, got {dt}")
    system = assemble_steady(mesh, fault, scenario, mode)
    layout = system.layout
    if len(previous.cell) != mesh.n_cells or tuple(len(previous.fault_cell(j)) for j in range(2)) != fault.n_cells:
        raise AssemblyError("previous state does not provide a value for every cell of this step")
    prev = np.zeros(layout.size)
    prev[:mesh.n_cells] = previous.cell
    for j in range(2):
        prev[layout.fault_cells(j)] = previous.fault_cell(j)
    return add_mass(system, mass_diagonal(mesh, fault, scenario, layout, dt), prev)


@dataclass(frozen=True, eq=False)
class TransientResult:
    times: np.ndarray
    offsets: np.ndarray
    states: list
    meshes: list
    faults: list
    reports: list


def run_transient(scenario: ScenarioSpec, mode: str = "virtual", solver: str = "direct",
                  t0: float = 0.0, **solve_kw) -> TransientResult:
    """Steady initial solve then one implicit Euler step per schedule entry."""
    tr = scenario.transient
    if tr is None:
        raise AssemblyError("scenario has no transient schedule")
    init = replace(scenario, bc={**scenario.bc, **tr.initial_bc})
    mesh = scenario.mesh.build()
    fault = build_fault_model(mesh, init, neutral=True)
    state, rep = solve_steady(assemble_steady(mesh, fault, init, mode), solver, **solve_kw)
    times, offsets = [t0], [scenario.mesh.offset]
    states, meshes, faults, reports = [state], [mesh], [fault], [rep]
    t = t0
    for k, (dt, off) in enumerate(zip(tr.dt, tr.offsets), start=1):
        try:
            mesh = scenario.mesh.build(offset=off)
            fault = build_fault_model(mesh, scenario)
            system = assemble_transient_step(state, dt, mesh, fault, scenario, mode)
            state, rep = solve_steady(system, solver, **solve_kw)
        except (ValueError, RuntimeError) as exc:
            raise type(exc)(f"step {k}: {exc}") from exc
        t += dt
        times.append(t)
        offsets.append(off)
        states.append(state)
        meshes.append(mesh)
        faults.append(fault)
        reports.append(rep)
    return TransientResult(np.asarray(times), np.asarray(offsets), states, meshes, faults, reports)
