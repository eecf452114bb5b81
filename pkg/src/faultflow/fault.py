"""Co-dimension one fault representation.

Each side of the fault carries its own one-dimensional layer grid, inherited
one-to-one from the matrix trace faces of that side.  The two layers meet on
the fault centre line, where their (possibly non-matching) partitions are
intersected into sub-faces.  For assembly the layer cells can be extruded
into thin rectangles of width d/2 ("virtual cells") so that the ordinary
two-dimensional hybrid scheme applies to them.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mesh import FAULT, Mesh

# kinds of faces seen by a virtual cell
TRACE, LAYER, MID = 0, 1, 2


class FaultError(ValueError):
    pass


@dataclass(frozen=True)
class FaultGeometry:
    """Straight vertical fault ``x = x0`` of thickness ``d``.

    The unit normal points from subdomain 1 (left) to subdomain 2 (right);
    layer 1 occupies normal offsets (-d/2, 0) and layer 2 offsets (0, d/2).
    """

    x: float
    y_range: tuple
    thickness: float

    def __post_init__(self):
        if not self.thickness > 0.0:
            raise FaultError(f"fault thickness must be positive, got {self.thickness}")
        length = self.y_range[1] - self.y_range[0]
        if self.thickness > 0.1 * length:
            warnings.warn(f"fault thickness {self.thickness} is not small against its length {length}",
                          stacklevel=2)

    @property
    def normal(self) -> np.ndarray:
        return np.array([1.0, 0.0])

    @property
    def tangent(self) -> np.ndarray:
        return np.array([0.0, 1.0])

    def layer_offsets(self, layer: int) -> tuple:
        d = self.thickness
        return (-d / 2, 0.0) if layer == 1 else (0.0, d / 2)


def fault_geometry(mesh: Mesh, thickness: float) -> FaultGeometry:
    if mesh.split_x is None:
        raise FaultError("mesh has no fault locus")
    faces = np.flatnonzero(mesh.face_kind == FAULT)
    ys = mesh.points[mesh.face_nodes[faces].ravel(), 1]
    return FaultGeometry(float(mesh.split_x), (float(ys.min()), float(ys.max())), float(thickness))


@dataclass(frozen=True, eq=False)
class FaultLayerGrid:
    """One-dimensional grid of a fault layer.

    Cell ``k`` spans ``[nodes[k], nodes[k+1]]`` and inherits from matrix face
    ``trace_faces[k]``.  The 1D faces are the ``n + 1`` nodes; nodes ``0``
    and ``n`` are the ends of the layer.
    """

    layer: int
    x: float
    trace_faces: np.ndarray
    matrix_cells: np.ndarray
    nodes: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.trace_faces)

    @property
    def n_faces(self) -> int:
        return len(self.nodes)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def y_range(self) -> tuple:
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def h(self) -> float:
        return float(self.lengths.max())

    def locate(self, y) -> np.ndarray:
        """Cell containing each y, -1 outside the layer."""
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.nodes, y, side="right") - 1
        k[(y < self.nodes[0]) | (y > self.nodes[-1])] = -1
        k[k == self.n_cells] = self.n_cells - 1
        return k

    def cones(self):
        """1D cone arrays (cell, node, outward normal, distance), two per cell."""
        n = self.n_cells
        cell = np.repeat(np.arange(n), 2)
        node = np.column_stack([np.arange(n), np.arange(1, n + 1)]).ravel()
        normal = np.tile([-1.0, 1.0], n)
        dist = np.repeat(0.5 * self.lengths, 2)
        return cell, node, normal, dist


def extract_layer_grids(mesh: Mesh, fault_geometry: FaultGeometry | None = None):
    """Build the two layer grids from the matrix trace faces of each side."""
    layers = []
    for side in (1, 2):
        faces = mesh.fault_faces(side)
        if len(faces) == 0:
            raise FaultError(f"side {side} has no fault-trace faces; the fault must cut the domain")
        ends = np.sort(mesh.points[mesh.face_nodes[faces], 1], axis=1)
        if np.any(np.abs(ends[1:, 0] - ends[:-1, 1]) > 1e-12 * max(1.0, np.abs(ends).max())):
            raise FaultError(f"fault trace on side {side} is not contiguous")
        nodes = np.concatenate([ends[:, 0], ends[-1:, 1]])
        x = float(mesh.face_center[faces[0], 0])
        layers.append(FaultLayerGrid(side, x, faces, mesh.face_cells[faces, 0].copy(), nodes))
    return layers[0], layers[1]


@dataclass(frozen=True)
class EffectiveCoefficients:
    """Tangential conductance d*lam_tau/2 and normal transmissivity 2*lam_n/d."""

    lam_hat: np.ndarray
    lam_gamma: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.lam_hat) > 0)) or np.any(~(np.asarray(self.lam_gamma) > 0)):
            raise FaultError("effective coefficients must be strictly positive")


def effective_coefficients(lam_n, lam_tau, d) -> EffectiveCoefficients:
    lam_n, lam_tau, d = (np.asarray(v, dtype=float) for v in (lam_n, lam_tau, d))
    for name, v in (("lam_n", lam_n), ("lam_tau", lam_tau), ("d", d)):
        if np.any(~(v > 0)):
            raise FaultError(f"{name} must be strictly positive")
    return EffectiveCoefficients(lam_hat=d * lam_tau / 2.0, lam_gamma=2.0 * lam_n / d)


@dataclass(frozen=True, eq=False)
class InterfacePartition:
    """Sub-faces of the fault centre line with the layer cells facing them.

    ``cell1``/``cell2`` are ``-1`` where a layer does not cover the sub-face.
    """

    y_lo: np.ndarray
    y_hi: np.ndarray
    cell1: np.ndarray
    cell2: np.ndarray

    @property
    def n_faces(self) -> int:
        return len(self.y_lo)

    @property
    def lengths(self) -> np.ndarray:
        return self.y_hi - self.y_lo

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.y_lo + self.y_hi)

    @property
    def shared(self) -> np.ndarray:
        return (self.cell1 >= 0) & (self.cell2 >= 0)

    @property
    def is_matching(self) -> bool:
        """Every sub-face is a whole cell of both layers and vice versa."""
        return bool(np.all(self.shared)
                    and len(np.unique(self.cell1)) == self.n_faces
                    and len(np.unique(self.cell2)) == self.n_faces)


def intersect_partitions(layer1: FaultLayerGrid, layer2: FaultLayerGrid, rtol: float = 1e-12) -> InterfacePartition:
    """Merge the breakpoints of both layers into one partition.

    Breakpoints closer than ``rtol * h`` are merged so no sliver sub-face is
    created.
    """
    h = max(layer1.h, layer2.h)
    pts = np.sort(np.concatenate([layer1.nodes, layer2.nodes]))
    keep = [pts[0]]
    for y in pts[1:]:
        if y - keep[-1] > rtol * h:
            keep.append(y)
    pts = np.asarray(keep)
    lo, hi = pts[:-1], pts[1:]
    mid = 0.5 * (lo + hi)
    return InterfacePartition(lo, hi, layer1.locate(mid), layer2.locate(mid))


@dataclass(frozen=True, eq=False)
class VirtualCellGrid:
    """Layer cells extruded into rectangles of width d/2.

    Cells are numbered layer 1 first.  Each cone records the kind of face it
    sees (``TRACE``: the matrix footprint face, ``LAYER``: a 1D node of the
    layer, i.e. a lateral or end face, ``MID``: an interface sub-face) and its
    index within that kind.  ``permeability`` is the fault tensor per cell,
    or ``None`` when it is supplied at assembly time.
    """

    n_layer1: int
    cell_center: np.ndarray
    cell_area: np.ndarray
    cell_layer: np.ndarray
    cell_index: np.ndarray
    cone_ptr: np.ndarray
    cone_kind: np.ndarray
    cone_ref: np.ndarray
    cone_center: np.ndarray
    cone_length: np.ndarray
    cone_normal: np.ndarray
    cone_dist: np.ndarray
    permeability: np.ndarray | None = None

    @property
    def n_cells(self) -> int:
        return len(self.cell_area)

    @property
    def cone_cell(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_cells), np.diff(self.cone_ptr))

    def rectangles(self) -> np.ndarray:
        """(xmin, ymin, xmax, ymax) of every virtual cell."""
        out = np.empty((self.n_cells, 4))
        w = self.cell_area / self._heights()
        out[:, 0] = self.cell_center[:, 0] - w / 2
        out[:, 2] = self.cell_center[:, 0] + w / 2
        out[:, 1] = self.cell_center[:, 1] - self._heights() / 2
        out[:, 3] = self.cell_center[:, 1] + self._heights() / 2
        return out

    def _heights(self) -> np.ndarray:
        trace = self.cone_kind == TRACE
        h = np.empty(self.n_cells)
        h[self.cone_cell[trace]] = self.cone_length[trace]
        return h


def extrude_virtual_cells(layers, interface_partition: InterfacePartition, fault_geometry: FaultGeometry,
                          permeability=None) -> VirtualCellGrid:
    """Extrude every layer cell by d/2 on its own side of the centre line."""
    layer1, layer2 = layers
    part = interface_partition
    x0 = fault_geometry.x
    w = fault_geometry.thickness / 2.0
    centers, areas, lay, idx = [], [], [], []
    ptr = [0]
    kind, ref, cc, ln, nrm, dst = [], [], [], [], [], []
    for layer, sign, owner in ((layer1, -1.0, part.cell1), (layer2, 1.0, part.cell2)):
        xc = x0 + sign * w / 2
        x_foot = x0 + sign * w
        sub_order = np.argsort(part.midpoints, kind="stable")
        for k in range(layer.n_cells):
            a, b = layer.nodes[k], layer.nodes[k + 1]
            ym = 0.5 * (a + b)
            centers.append((xc, ym))
            areas.append(w * (b - a))
            lay.append(layer.layer)
            idx.append(k)
            # footprint, bottom, top
            kind += [TRACE, LAYER, LAYER]
            ref += [int(layer.trace_faces[k]), k, k + 1]
            cc += [(x_foot, ym), (xc, a), (xc, b)]
            ln += [b - a, w, w]
            nrm += [(sign, 0.0), (0.0, -1.0), (0.0, 1.0)]
            dst += [w / 2, (b - a) / 2, (b - a) / 2]
            subs = sub_order[owner[sub_order] == k]
            for s in subs:
                kind.append(MID)
                ref.append(int(s))
                cc.append((x0, part.midpoints[s]))
                ln.append(part.lengths[s])
                nrm.append((-sign, 0.0))
                dst.append(w / 2)
            ptr.append(len(kind))
    perm = None if permeability is None else np.asarray(permeability, dtype=float)
    return VirtualCellGrid(
        n_layer1=layer1.n_cells,
        cell_center=np.asarray(centers, dtype=float),
        cell_area=np.asarray(areas, dtype=float),
        cell_layer=np.asarray(lay),
        cell_index=np.asarray(idx),
        cone_ptr=np.asarray(ptr),
        cone_kind=np.asarray(kind),
        cone_ref=np.asarray(ref),
        cone_center=np.asarray(cc, dtype=float),
        cone_length=np.asarray(ln, dtype=float),
        cone_normal=np.asarray(nrm, dtype=float),
        cone_dist=np.asarray(dst, dtype=float),
        permeability=perm,
    )


def normal_discrepancy(grid: VirtualCellGrid) -> float:
    """Largest |n_K + n_L| over interface sub-faces seen by both layers."""
    mid = np.flatnonzero(grid.cone_kind == MID)
    if len(mid) == 0:
        return 0.0
    refs = grid.cone_ref[mid]
    order = np.argsort(refs, kind="stable")
    refs, mid = refs[order], mid[order]
    worst = 0.0
    same = np.flatnonzero(refs[1:] == refs[:-1])
    for i in same:
        gap = grid.cone_normal[mid[i]] + grid.cone_normal[mid[i + 1]]
        worst = max(worst, float(np.hypot(*gap)))
    return worst
