"""Two-dimensional polygonal discretizations with cone geometry.

A mesh is a set of convex polygonal cells, the faces (edges) bounding them
and, for every (cell, face) pair, the cone with apex at the cell centre and
base on the face.  Faces lying on the vertical fault locus are kept
one-sided: each block owns its own trace faces, so the two sides of the
fault may be meshed independently and need not match.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INTERIOR = 0
BOUNDARY = 1
FAULT = 2

# cone distances below this fraction of the cell diameter are degenerate
_DEGENERATE_CONE = 1e-14


class MeshError(ValueError):
    """Raised when a discretization cannot be built."""


@dataclass(frozen=True)
class Block:
    """Structured (tensor-product) patch of a mesh.

    ``y_edges`` are the current (possibly shifted) coordinates; ``offset`` is
    the vertical translation applied to the block's reference position.
    """

    subdomain: int
    x_edges: np.ndarray
    y_edges: np.ndarray
    cell_start: int
    offset: float = 0.0

    @property
    def nx(self) -> int:
        return len(self.x_edges) - 1

    @property
    def ny(self) -> int:
        return len(self.y_edges) - 1

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return float((self.x_edges[-1] - self.x_edges[0]) * (self.y_edges[-1] - self.y_edges[0]))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable discretization D = (cells, faces, points) plus cone geometry.

    Cell-to-face connectivity is stored in CSR form (``cell_face_ptr``,
    ``cell_faces``); every per-cone array is aligned with ``cell_faces``.
    ``face_cells`` holds the adjacent cells with ``-1`` padding.
    """

    points: np.ndarray
    face_nodes: np.ndarray
    face_cells: np.ndarray
    face_kind: np.ndarray
    face_tag: np.ndarray
    cell_nodes: np.ndarray
    cell_face_ptr: np.ndarray
    cell_faces: np.ndarray
    cell_subdomain: np.ndarray
    face_center: np.ndarray
    face_length: np.ndarray
    cell_center: np.ndarray
    cell_area: np.ndarray
    cell_diameter: np.ndarray
    cone_normal: np.ndarray
    cone_dist: np.ndarray
    cone_area: np.ndarray
    blocks: tuple = field(default_factory=tuple)
    split_x: float | None = None

    @property
    def n_cells(self) -> int:
        return len(self.cell_area)

    @property
    def n_faces(self) -> int:
        return len(self.face_length)

    @cached_property
    def cone_cell(self) -> np.ndarray:
        """Owning cell of every cone."""
        return np.repeat(np.arange(self.n_cells), np.diff(self.cell_face_ptr))

    @cached_property
    def cone_face_center(self) -> np.ndarray:
        return self.face_center[self.cell_faces]

    @property
    def h(self) -> float:
        """Mesh size h_D, the largest cell diameter."""
        return float(self.cell_diameter.max())

    @cached_property
    def theta(self) -> float:
        return mesh_quality(self)

    @cached_property
    def cell_block(self) -> np.ndarray:
        out = np.empty(self.n_cells, dtype=int)
        for b, blk in enumerate(self.blocks):
            out[blk.cell_start:blk.cell_start + blk.n_cells] = b
        return out

    @cached_property
    def cell_reference_center(self) -> np.ndarray:
        """Cell centres with each block's vertical offset removed.

        Material properties attached to a sliding block are evaluated here so
        that they travel with the cells.
        """
        shift = np.array([blk.offset for blk in self.blocks])[self.cell_block]
        ref = self.cell_center.copy()
        ref[:, 1] -= shift
        return ref

    def faces_with_tag(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.face_tag == tag)

    def fault_faces(self, subdomain: int) -> np.ndarray:
        """Fault-trace faces owned by cells of ``subdomain``, sorted by y."""
        faces = np.flatnonzero(self.face_kind == FAULT)
        faces = faces[self.cell_subdomain[self.face_cells[faces, 0]] == subdomain]
        return faces[np.argsort(self.face_center[faces, 1], kind="stable")]

    def cell_slice(self, cell: int) -> slice:
        return slice(self.cell_face_ptr[cell], self.cell_face_ptr[cell + 1])


def _cell_sum(owner, values, n):
    return np.column_stack([np.bincount(owner, weights=values[:, k], minlength=n) for k in range(values.shape[1])])


def mesh_from_topology(points, face_nodes, cell_face_ptr, cell_faces, cell_nodes,
                       cell_subdomain, face_tag, *, blocks=(), split_x=None) -> Mesh:
    """Compute geometry for a polygonal topology and return a :class:`Mesh`.

    Cell centres are centres of mass.  Outward normals are oriented with
    respect to the vertex average, which lies inside convex cells.
    """
    points = np.asarray(points, dtype=float)
    face_nodes = np.asarray(face_nodes, dtype=np.int64)
    cell_face_ptr = np.asarray(cell_face_ptr, dtype=np.int64)
    cell_faces = np.asarray(cell_faces, dtype=np.int64)
    n_cells = len(cell_face_ptr) - 1
    n_faces = len(face_nodes)
    if not np.all(np.isfinite(points)):
        raise MeshError("non-finite point coordinates")

    p0 = points[face_nodes[:, 0]]
    p1 = points[face_nodes[:, 1]]
    face_center = 0.5 * (p0 + p1)
    tangent = p1 - p0
    face_length = np.hypot(tangent[:, 0], tangent[:, 1])
    if np.any(face_length <= 0.0):
        bad = int(np.flatnonzero(face_length <= 0.0)[0])
        raise MeshError(f"face {bad} has zero measure")
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / face_length[:, None]

    counts = np.diff(cell_face_ptr)
    cone_cell = np.repeat(np.arange(n_cells), counts)
    xs = face_center[cell_faces]
    ls = face_length[cell_faces]
    guess = _cell_sum(cone_cell, xs, n_cells) / counts[:, None]

    rel = xs - guess[cone_cell]
    n = normal[cell_faces].copy()
    flip = np.einsum("ij,ij->i", rel, n) < 0.0
    n[flip] *= -1.0
    height = np.einsum("ij,ij->i", rel, n)
    area = 0.5 * np.bincount(cone_cell, weights=ls * height, minlength=n_cells)
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise MeshError(f"cell {bad} has non-positive area")
    moment = _cell_sum(cone_cell, (ls * height)[:, None] * rel, n_cells)
    center = guess + moment / (3.0 * area[:, None])

    dist = np.einsum("ij,ij->i", xs - center[cone_cell], n)

    diameter = np.zeros(n_cells)
    for m in np.unique(counts):
        cells = np.flatnonzero(counts == m)
        rows = cell_face_ptr[cells][:, None] + np.arange(m)[None, :]
        verts = np.concatenate([face_nodes[cell_faces[rows], 0], face_nodes[cell_faces[rows], 1]], axis=1)
        for lo in range(0, len(cells), 65536):
            xyz = points[verts[lo:lo + 65536]]
            diff = xyz[:, :, None, :] - xyz[:, None, :, :]
            diameter[cells[lo:lo + 65536]] = np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))

    if np.any(dist <= _DEGENERATE_CONE * diameter[cone_cell]):
        k = int(np.flatnonzero(dist <= _DEGENERATE_CONE * diameter[cone_cell])[0])
        raise MeshError(f"degenerate cone: cell {cone_cell[k]}, face {cell_faces[k]}")

    face_cells = -np.ones((n_faces, 2), dtype=np.int64)
    order = np.argsort(cell_faces, kind="stable")
    sorted_faces = cell_faces[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    face_cells[sorted_faces[first], 0] = cone_cell[order[first]]
    second = ~first
    face_cells[sorted_faces[second], 1] = cone_cell[order[second]]
    n_adj = (face_cells >= 0).sum(axis=1)

    face_tag = np.asarray(face_tag, dtype="<U16")
    face_kind = np.where(n_adj == 2, INTERIOR, np.where(face_tag == "fault", FAULT, BOUNDARY)).astype(np.int8)

    return Mesh(
        points=points,
        face_nodes=face_nodes,
        face_cells=face_cells,
        face_kind=face_kind,
        face_tag=face_tag,
        cell_nodes=np.asarray(cell_nodes, dtype=np.int64),
        cell_face_ptr=cell_face_ptr,
        cell_faces=cell_faces,
        cell_subdomain=np.asarray(cell_subdomain, dtype=np.int64),
        face_center=face_center,
        face_length=face_length,
        cell_center=center,
        cell_area=area,
        cell_diameter=diameter,
        cone_normal=n,
        cone_dist=dist,
        cone_area=0.5 * ls * dist,
        blocks=tuple(blocks),
        split_x=split_x,
    )


def _block_topology(x_edges, y_edges, left_tag, right_tag, point_start, face_start, cell_start):
    nx, ny = len(x_edges) - 1, len(y_edges) - 1
    X, Y = np.meshgrid(x_edges, y_edges, indexing="xy")
    points = np.column_stack([X.ravel(), Y.ravel()])

    def pid(i, j):
        return point_start + i + j * (nx + 1)

    # vertical faces: id = i * ny + j, i = 0..nx
    iv, jv = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing="ij")
    iv, jv = iv.ravel(), jv.ravel()
    v_nodes = np.column_stack([pid(iv, jv), pid(iv, jv + 1)])
    v_tag = np.full(len(iv), "", dtype="<U16")
    v_tag[iv == 0] = left_tag
    v_tag[iv == nx] = right_tag
    n_vert = len(iv)

    # horizontal faces: id = n_vert + j * nx + i, j = 0..ny
    jh, ih = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
    ih, jh = ih.ravel(), jh.ravel()
    h_nodes = np.column_stack([pid(ih, jh), pid(ih + 1, jh)])
    h_tag = np.full(len(ih), "", dtype="<U16")
    h_tag[jh == 0] = "bottom"
    h_tag[jh == ny] = "top"

    face_nodes = np.vstack([v_nodes, h_nodes])
    face_tag = np.concatenate([v_tag, h_tag])

    jc, ic = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    ic, jc = ic.ravel(), jc.ravel()
    bottom = face_start + n_vert + jc * nx + ic
    top = face_start + n_vert + (jc + 1) * nx + ic
    left = face_start + ic * ny + jc
    right = face_start + (ic + 1) * ny + jc
    cell_faces = np.column_stack([bottom, right, top, left])
    cell_nodes = np.column_stack([pid(ic, jc), pid(ic + 1, jc), pid(ic + 1, jc + 1), pid(ic, jc + 1)])
    return points, face_nodes, face_tag, cell_faces, cell_nodes


def _assemble_blocks(specs, split_x):
    """specs: list of (subdomain, x_edges, y_edges, left_tag, right_tag, offset)."""
    pts, fnodes, ftags, cfaces, cnodes, subs, blocks = [], [], [], [], [], [], []
    p_start = f_start = c_start = 0
    for subdomain, x_edges, y_edges, ltag, rtag, offset in specs:
        p, fn, ft, cf, cn = _block_topology(x_edges, y_edges, ltag, rtag, p_start, f_start, c_start)
        pts.append(p)
        fnodes.append(fn)
        ftags.append(ft)
        cfaces.append(cf)
        cnodes.append(cn)
        subs.append(np.full(len(cf), subdomain))
        blocks.append(Block(subdomain, np.asarray(x_edges, float), np.asarray(y_edges, float), c_start, offset))
        p_start += len(p)
        f_start += len(fn)
        c_start += len(cf)
    cell_faces = np.vstack(cfaces)
    ptr = np.arange(0, 4 * len(cell_faces) + 1, 4)
    return mesh_from_topology(
        np.vstack(pts), np.vstack(fnodes), ptr, cell_faces.ravel(), np.vstack(cnodes),
        np.concatenate(subs), np.concatenate(ftags), blocks=blocks, split_x=split_x,
    )


def _check_bbox(bbox):
    xmin, ymin, xmax, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise MeshError(f"degenerate bounding box {bbox!r}")
    return xmin, ymin, xmax, ymax


def build_cartesian(nx: int, ny: int, bbox=(0.0, 0.0, 1.0, 1.0), subdomain_split_x: float | None = None) -> Mesh:
    """Uniform nx-by-ny rectangular mesh of ``bbox = (xmin, ymin, xmax, ymax)``.

    Cells left of ``subdomain_split_x`` belong to subdomain 1, the others to
    subdomain 2, and faces on the split line become fault-trace faces.  A
    split on the domain boundary gives a single block without fault.
    """
    if nx < 1 or ny < 1:
        raise MeshError("resolutions must be >= 1")
    xmin, ymin, xmax, ymax = _check_bbox(bbox)
    split = xmax if subdomain_split_x is None else float(subdomain_split_x)
    hx = (xmax - xmin) / nx
    k = (split - xmin) / hx
    k_int = int(round(k))
    if abs(k - k_int) > 1e-9 or not 0 <= k_int <= nx:
        raise MeshError(f"split x={split} is not on a grid line of the {nx}-cell partition of [{xmin}, {xmax}]")
    if k_int in (0, nx):
        sub = 1 if k_int == nx else 2
        x_edges = np.linspace(xmin, xmax, nx + 1)
        y_edges = np.linspace(ymin, ymax, ny + 1)
        return _assemble_blocks([(sub, x_edges, y_edges, "left", "right", 0.0)], None)
    return build_two_block(k_int, ny, nx - k_int, ny, bbox, xmin + k_int * hx, 0.0)


def build_two_block(nx_left: int, ny_left: int, nx_right: int, ny_right: int, bbox=(0.0, 0.0, 1.0, 1.0),
                    split_x: float = 0.5, vertical_offset: float = 0.0, *, y_edges_left=None,
                    y_edges_right=None) -> Mesh:
    """Two independently meshed blocks meeting at the vertical line ``split_x``.

    The right block is translated upwards by ``vertical_offset``, so its
    fault trace covers ``[ymin + offset, ymax + offset]``.  Explicit
    (reference, unshifted) ``y_edges_*`` override the uniform spacing.
    """
    xmin, ymin, xmax, ymax = _check_bbox(bbox)
    if min(nx_left, ny_left, nx_right, ny_right) < 1:
        raise MeshError("resolutions must be >= 1")
    if not xmin < split_x < xmax:
        raise MeshError(f"split x={split_x} must lie strictly inside ({xmin}, {xmax})")
    height = ymax - ymin
    if abs(vertical_offset) >= height:
        raise MeshError(f"|offset|={abs(vertical_offset)} must be smaller than the domain height {height}")
    yl = np.linspace(ymin, ymax, ny_left + 1) if y_edges_left is None else np.asarray(y_edges_left, float)
    yr = np.linspace(ymin, ymax, ny_right + 1) if y_edges_right is None else np.asarray(y_edges_right, float)
    for edges in (yl, yr):
        if np.any(np.diff(edges) <= 0.0):
            raise MeshError("y edges must be strictly increasing (zero-height block or row)")
    specs = [
        (1, np.linspace(xmin, split_x, nx_left + 1), yl, "left", "fault", 0.0),
        (2, np.linspace(split_x, xmax, nx_right + 1), yr + vertical_offset, "fault", "right", float(vertical_offset)),
    ]
    return _assemble_blocks(specs, float(split_x))


def mesh_quality(mesh: Mesh) -> float:
    """Quality parameter: max of neighbour distance ratios and h_K / d_{K,sigma}."""
    ratio = mesh.cell_diameter[mesh.cone_cell] / mesh.cone_dist
    theta = float(ratio.max())
    interior = np.flatnonzero(mesh.face_kind == INTERIOR)
    if len(interior):
        # distances of the two sides of every interior face, via a sort on face id
        order = np.argsort(mesh.cell_faces, kind="stable")
        faces = mesh.cell_faces[order]
        dist = mesh.cone_dist[order]
        mask = np.isin(faces, interior)
        faces, dist = faces[mask], dist[mask]
        pair = dist.reshape(-1, 2)
        theta = max(theta, float((pair.max(axis=1) / pair.min(axis=1)).max()))
    return theta


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    cell: int | None = None
    face: int | None = None


def validate(mesh: Mesh, *, rtol: float = 1e-12) -> list[Violation]:
    """Check the mesh invariants and return every violation found.

    Never raises; an empty list means the mesh is valid.
    """
    out: list[Violation] = []
    nf, nc = len(mesh.face_length), len(mesh.cell_area)

    if not np.all(np.isfinite(mesh.points)):
        out.append(Violation("finite coordinates", "non-finite point coordinates"))
    bad_ref = np.flatnonzero((mesh.cell_faces < 0) | (mesh.cell_faces >= nf))
    for k in bad_ref:
        out.append(Violation("face reference", f"cone {k} references missing face {mesh.cell_faces[k]}",
                             cell=int(mesh.cone_cell[k])))
    if len(bad_ref):
        return out

    for f in np.flatnonzero(~(mesh.face_length > 0.0)):
        out.append(Violation("face measure", f"face {f} has measure {mesh.face_length[f]}", face=int(f)))
    mid = 0.5 * (mesh.points[mesh.face_nodes[:, 0]] + mesh.points[mesh.face_nodes[:, 1]])
    scale = max(1.0, float(np.abs(mesh.points).max()))
    for f in np.flatnonzero(np.abs(mid - mesh.face_center).max(axis=1) > 1e-12 * scale):
        out.append(Violation("face barycenter", f"face {f} centre is not the midpoint of its endpoints", face=int(f)))
    n_adj = (mesh.face_cells >= 0).sum(axis=1)
    for f in np.flatnonzero((mesh.face_kind == INTERIOR) & (n_adj != 2)):
        out.append(Violation("face adjacency", f"interior face {f} has {n_adj[f]} cells", face=int(f)))
    for f in np.flatnonzero((mesh.face_kind != INTERIOR) & (n_adj != 1)):
        out.append(Violation("face adjacency", f"boundary face {f} has {n_adj[f]} cells", face=int(f)))

    for c in np.flatnonzero(~(mesh.cell_area > 0.0)):
        out.append(Violation("cell measure", f"cell {c} has area {mesh.cell_area[c]}", cell=int(c)))
    for k in np.flatnonzero(~(mesh.cone_dist > 0.0)):
        out.append(Violation("cone distance", f"cone {k} has distance {mesh.cone_dist[k]}",
                             cell=int(mesh.cone_cell[k]), face=int(mesh.cell_faces[k])))
    nn = np.hypot(mesh.cone_normal[:, 0], mesh.cone_normal[:, 1])
    for k in np.flatnonzero(np.abs(nn - 1.0) > 1e-12):
        out.append(Violation("normal norm", f"cone {k} normal has norm {nn[k]}",
                             cell=int(mesh.cone_cell[k]), face=int(mesh.cell_faces[k])))

    ls = mesh.face_length[mesh.cell_faces]
    closure = _cell_sum(mesh.cone_cell, ls[:, None] * mesh.cone_normal, nc)
    perim = np.bincount(mesh.cone_cell, weights=np.abs(ls), minlength=nc)
    for c in np.flatnonzero(np.abs(closure).max(axis=1) > 1e-12 * np.maximum(perim, 1e-300)):
        out.append(Violation("closed polygon", f"cell {c}: sum |s| n = {closure[c]}", cell=int(c)))
    ends = np.concatenate([mesh.face_nodes[mesh.cell_faces, 0], mesh.face_nodes[mesh.cell_faces, 1]])
    owner = np.concatenate([mesh.cone_cell, mesh.cone_cell])
    key = owner * len(mesh.points) + ends
    _, cnt = np.unique(key, return_counts=True)
    if np.any(cnt != 2):
        uk = np.unique(key)[cnt != 2]
        for c in np.unique(uk // len(mesh.points)):
            out.append(Violation("closed polygon", f"cell {c} boundary is not a closed loop", cell=int(c)))

    cone_sum = np.bincount(mesh.cone_cell, weights=mesh.cone_area, minlength=nc)
    for c in np.flatnonzero(np.abs(cone_sum - mesh.cell_area) > rtol * 10 * np.abs(mesh.cell_area)):
        out.append(Violation("cone tiling", f"cell {c}: cone areas sum to {cone_sum[c]} != {mesh.cell_area[c]}",
                             cell=int(c)))

    order = np.argsort(mesh.cell_faces, kind="stable")
    faces = mesh.cell_faces[order]
    interior = mesh.face_kind[faces] == INTERIOR
    normals = mesh.cone_normal[order][interior]
    faces_i = faces[interior]
    if len(faces_i) % 2 == 0 and len(faces_i):
        pairs = normals.reshape(-1, 2, 2)
        gap = np.abs(pairs[:, 0] + pairs[:, 1]).max(axis=1)
        for f in faces_i[::2][gap > 1e-12]:
            out.append(Violation("opposite normals", f"interior face {f}: normals are not opposite", face=int(f)))

    if mesh.blocks:
        for b, blk in enumerate(mesh.blocks):
            got = mesh.cell_area[blk.cell_start:blk.cell_start + blk.n_cells].sum()
            if abs(got - blk.area) > rtol * blk.area:
                out.append(Violation("area tiling", f"block {b}: cell areas sum to {got}, block area {blk.area}"))
    theta = mesh_quality(mesh) if not out else np.inf
    if not out and not np.isfinite(theta):
        out.append(Violation("quality", "mesh quality parameter is not finite"))
    return out
