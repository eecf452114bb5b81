"""Hybrid finite volume operators.

Everything here works on a :class:`ConeSet`, a flat description of cells
and the cones ``D_{K,sigma}`` they are made of.  The same code therefore
handles the 2D matrix mesh, the extruded virtual fault cells and the 1D
fault layers (``dim = 1``, faces are points of unit measure).

Face values are indexed by ``ConeSet.face`` which may be any non-negative
integer labelling; two cones referencing the same label share that face.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fault import FaultLayerGrid, VirtualCellGrid
from .mesh import Mesh

CHUNK = 200_000


class HfvError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConeSet:
    dim: int
    ptr: np.ndarray
    face: np.ndarray
    face_center: np.ndarray
    face_measure: np.ndarray
    normal: np.ndarray
    dist: np.ndarray
    cell_center: np.ndarray
    cell_measure: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cell_measure)

    @property
    def n_faces(self) -> int:
        return int(self.face.max()) + 1 if len(self.face) else 0

    @property
    def cone_cell(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_cells), np.diff(self.ptr))

    @property
    def cone_measure(self) -> np.ndarray:
        return self.face_measure * self.dist / self.dim

    def cell_slice(self, cell: int) -> slice:
        return slice(self.ptr[cell], self.ptr[cell + 1])


def cones_from_mesh(mesh: Mesh) -> ConeSet:
    return ConeSet(2, mesh.cell_face_ptr, mesh.cell_faces, mesh.cone_face_center,
                   mesh.face_length[mesh.cell_faces], mesh.cone_normal, mesh.cone_dist,
                   mesh.cell_center, mesh.cell_area)


def cones_from_layer(layer: FaultLayerGrid) -> ConeSet:
    """1D cones of a fault layer; face labels are the layer node indices."""
    cell, node, normal, dist = layer.cones()
    n = layer.n_cells
    return ConeSet(1, 2 * np.arange(n + 1), node, layer.nodes[node, None], np.ones(2 * n),
                   normal[:, None], dist, layer.centers[:, None], layer.lengths)


def cones_from_virtual(grid: VirtualCellGrid, face_label: np.ndarray) -> ConeSet:
    """Cones of the virtual cells with the caller's face labelling (one per cone)."""
    return ConeSet(2, grid.cone_ptr, np.asarray(face_label), grid.cone_center, grid.cone_length,
                   grid.cone_normal, grid.cone_dist, grid.cell_center, grid.cell_area)


@dataclass(frozen=True, eq=False)
class HybridValues:
    """One value per cell and one per face label."""

    cell: np.ndarray
    face: np.ndarray


def project_pointwise(cones: ConeSet, phi) -> HybridValues:
    """Sample ``phi`` at cell and face centres; ``phi`` takes an (n, dim) array."""
    face = np.zeros(cones.n_faces)
    face[cones.face] = phi(cones.face_center)
    return HybridValues(np.asarray(phi(cones.cell_center), dtype=float), face)


def project_cellwise(values: HybridValues) -> np.ndarray:
    return np.array(values.cell, dtype=float)


def _differences(cones: ConeSet, v: HybridValues) -> np.ndarray:
    return v.face[cones.face] - v.cell[cones.cone_cell]


def cell_gradients(cones: ConeSet, v: HybridValues) -> np.ndarray:
    w = (cones.face_measure * _differences(cones, v))[:, None] * cones.normal
    out = np.zeros((cones.n_cells, cones.dim))
    for k in range(cones.dim):
        out[:, k] = np.bincount(cones.cone_cell, w[:, k], minlength=cones.n_cells)
    return out / cones.cell_measure[:, None]


def cell_gradient(cones: ConeSet, cell: int, v: HybridValues) -> np.ndarray:
    s = cones.cell_slice(cell)
    diff = v.face[cones.face[s]] - v.cell[cell]
    return (cones.face_measure[s] * diff) @ cones.normal[s] / cones.cell_measure[cell]


def stabilization_residuals(cones: ConeSet, v: HybridValues, alpha: float = 1.0) -> np.ndarray:
    grad = cell_gradients(cones, v)[cones.cone_cell]
    rel = cones.face_center - cones.cell_center[cones.cone_cell]
    inner = _differences(cones, v) - np.einsum("ij,ij->i", grad, rel)
    return alpha * np.sqrt(cones.dim) / cones.dist * inner


def stabilization_residual(cones: ConeSet, cell: int, local_face: int, v: HybridValues,
                           alpha: float = 1.0) -> float:
    i = cones.ptr[cell] + local_face
    grad = cell_gradient(cones, cell, v)
    inner = v.face[cones.face[i]] - v.cell[cell] - grad @ (cones.face_center[i] - cones.cell_center[cell])
    return float(alpha * np.sqrt(cones.dim) / cones.dist[i] * inner)


def cone_gradients(cones: ConeSet, v: HybridValues, alpha: float = 1.0) -> np.ndarray:
    grad = cell_gradients(cones, v)[cones.cone_cell]
    return grad + stabilization_residuals(cones, v, alpha)[:, None] * cones.normal


def cone_gradient(cones: ConeSet, cell: int, local_face: int, v: HybridValues, alpha: float = 1.0) -> np.ndarray:
    i = cones.ptr[cell] + local_face
    return cell_gradient(cones, cell, v) + stabilization_residual(cones, cell, local_face, v, alpha) * cones.normal[i]


def check_spd(perm: np.ndarray, dim: int) -> np.ndarray:
    """Broadcast ``perm`` to (n, dim, dim) or (1, dim, dim) and reject non-SPD tensors."""
    perm = np.asarray(perm, dtype=float)
    if perm.ndim == 0:
        perm = perm * np.eye(dim)[None]
    elif perm.ndim == 1:
        perm = perm[:, None, None] * np.eye(dim)[None]
    elif perm.ndim == 2:
        perm = perm[None]
    if perm.shape[1:] != (dim, dim):
        raise HfvError(f"permeability must be {dim}x{dim}, got shape {perm.shape}")
    if not np.all(np.isfinite(perm)):
        raise HfvError("permeability has non-finite entries")
    scale = np.abs(perm).max(axis=(1, 2))
    if np.any(np.abs(perm - perm.transpose(0, 2, 1)).max(axis=(1, 2)) > 1e-12 * scale):
        raise HfvError("permeability tensor is not symmetric")
    if np.any(np.linalg.eigvalsh(perm).min(axis=1) <= 0.0):
        raise HfvError("permeability tensor is not positive definite")
    return perm


def energy(cones: ConeSet, v: HybridValues, perm, alpha: float = 1.0) -> float:
    """sum over cones of |D| g.Lambda.g with g the cone gradient."""
    perm = check_spd(perm, cones.dim)
    g = cone_gradients(cones, v, alpha)
    lam = perm[cones.cone_cell] if len(perm) > 1 else perm
    return float(np.sum(cones.cone_measure * np.einsum("ni,nij,nj->n", g, np.broadcast_to(lam, (len(g),) + lam.shape[1:]), g)))


def _groups(cones: ConeSet, cells: np.ndarray | None = None):
    """Yield (cells, cone index matrix) for cells sharing a face count, chunked."""
    counts = np.diff(cones.ptr)
    cells = np.arange(cones.n_cells) if cells is None else np.asarray(cells)
    for m in np.unique(counts[cells]):
        sel = cells[counts[cells] == m]
        for start in range(0, len(sel), CHUNK):
            part = sel[start:start + CHUNK]
            yield part, cones.ptr[part][:, None] + np.arange(m)


def difference_stiffness(cones: ConeSet, cells: np.ndarray, ci: np.ndarray, perm: np.ndarray, alpha: float):
    """Local matrices on the differences (v_sigma - v_K) for a group of cells.

    ``ci`` is (n, m) cone indices.  Returns (n, m, m) symmetric arrays B with
    local energy = d^T B d.
    """
    n = cones.normal[ci]
    s = cones.face_measure[ci]
    dist = cones.dist[ci]
    rel = cones.face_center[ci] - cones.cell_center[cells][:, None, :]
    c = (s / cones.cell_measure[cells][:, None])[..., None] * n
    proj = np.einsum("gtd,gsd->gst", c, rel)
    m = ci.shape[1]
    coef = alpha * np.sqrt(cones.dim) / dist
    G = c[:, None, :, :] + (coef[:, :, None, None] * n[:, :, None, :]) * (np.eye(m)[None] - proj)[..., None]
    lam = perm[cells] if len(perm) > 1 else np.broadcast_to(perm, (len(cells),) + perm.shape[1:])
    LG = np.einsum("gij,gstj->gsti", lam, G)
    w = s * dist / cones.dim
    B = np.einsum("gs,gsti,gsui->gtu", w, G, LG)
    return 0.5 * (B + B.transpose(0, 2, 1))


@dataclass(frozen=True, eq=False)
class LocalStiffness:
    """Dense local matrix over [v_K, v_sigma_1, ..., v_sigma_m]."""

    matrix: np.ndarray
    faces: np.ndarray
    alpha: float


def _full(B: np.ndarray) -> np.ndarray:
    r = B.sum(axis=2)
    m = B.shape[1]
    A = np.empty((len(B), m + 1, m + 1))
    A[:, 0, 0] = r.sum(axis=1)
    A[:, 0, 1:] = -r
    A[:, 1:, 0] = -r
    A[:, 1:, 1:] = B
    return A


def local_stiffness(cones: ConeSet, cell: int, perm, alpha: float = 1.0) -> LocalStiffness:
    perm = check_spd(perm, cones.dim)
    lam = perm[cell:cell + 1] if len(perm) > 1 else perm
    ci = (cones.ptr[cell] + np.arange(cones.ptr[cell + 1] - cones.ptr[cell]))[None]
    B = difference_stiffness(cones, np.array([cell]), ci, lam if len(perm) > 1 else perm, alpha)
    return LocalStiffness(_full(B)[0], cones.face[ci[0]].copy(), alpha)


def tangential_local_stiffness(layer: FaultLayerGrid, cell: int, lam_hat: float, alpha_hat: float = 1.0) -> LocalStiffness:
    """3x3 matrix over [cell, bottom node, top node] of a fault layer cell."""
    return local_stiffness(cones_from_layer(layer), cell, lam_hat, alpha_hat)


def assemble_operator(cones: ConeSet, perm, alpha: float, cell_dof: np.ndarray, face_dof: np.ndarray,
                      n_dofs: int) -> sp.csr_matrix:
    """Global sparse matrix of the cone-sum energy.

    ``cell_dof[K]`` and ``face_dof[label]`` give global unknown numbers.
    """
    perm = check_spd(perm, cones.dim)
    out = sp.csr_matrix((n_dofs, n_dofs))
    for cells, ci in _groups(cones):
        A = _full(difference_stiffness(cones, cells, ci, perm, alpha))
        dofs = np.column_stack([cell_dof[cells], face_dof[cones.face[ci]]])
        m1 = dofs.shape[1]
        rows = np.repeat(dofs, m1, axis=1).ravel()
        cols = np.tile(dofs, (1, m1)).ravel()
        out = out + sp.csr_matrix((A.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))
    return out


def local_fluxes(cones: ConeSet, v: HybridValues, perm, alpha: float = 1.0) -> np.ndarray:
    """Outward flux per cone, F_{K,sigma} = -(A_K v)_sigma."""
    perm = check_spd(perm, cones.dim)
    out = np.empty(len(cones.face))
    for cells, ci in _groups(cones):
        B = difference_stiffness(cones, cells, ci, perm, alpha)
        diff = v.face[cones.face[ci]] - v.cell[cells][:, None]
        out[ci] = -np.einsum("gtu,gu->gt", B, diff)
    return out


def semi_norm(cones: ConeSet, v: HybridValues) -> float:
    """sqrt of sum |sigma|/d_{K,sigma} (v_sigma - v_K)^2."""
    return float(np.sqrt(np.sum(cones.face_measure / cones.dist * _differences(cones, v) ** 2)))


def discrete_norm_1M(cones: ConeSet, cell_values: np.ndarray) -> float:
    """sqrt of sum |sigma| (D_sigma v)^2 / d_sigma for a cell-wise constant field.

    Faces seen by two cones use the jump and d_K + d_L; faces seen by one
    cone use |v_K| and d_K.
    """
    v = np.asarray(cell_values, dtype=float)[cones.cone_cell]
    order = np.argsort(cones.face, kind="stable")
    lab = cones.face[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    counts = np.diff(np.r_[starts, len(lab)])
    if np.any(counts > 2):
        raise HfvError("a face is shared by more than two cones")
    first = order[starts]
    jump = np.abs(v[first])
    d = cones.dist[first].copy()
    pair = counts == 2
    second = order[starts[pair] + 1]
    jump[pair] = np.abs(v[first[pair]] - v[second])
    d[pair] += cones.dist[second]
    return float(np.sqrt(np.sum(cones.face_measure[first] * jump ** 2 / d)))
