"""Output writers: legacy ASCII VTK, CSV tables and a JSON run manifest."""
from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

from .mesh import Mesh

VTK_QUAD = 9
VTK_LINE = 3


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _data_block(out, n, data):
    for name, arr in data.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != n:
            raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {n}")
        if arr.ndim == 1:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(_fmt(v) for v in arr)
        else:
            vec = np.zeros((n, 3))
            vec[:, :arr.shape[1]] = arr
            out.append(f"VECTORS {name} double")
            out.extend(" ".join(_fmt(c) for c in row) for row in vec)


def write_vtk_mesh(path, mesh: Mesh, cell_data: dict | None = None, title: str = "faultflow") -> Path:
    """Unstructured grid of quadrilateral cells with optional cell fields."""
    path = Path(path)
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(mesh.points)} double"]
    out.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.points)
    nc = mesh.n_cells
    out.append(f"CELLS {nc} {5 * nc}")
    out.extend("4 " + " ".join(str(int(i)) for i in row) for row in mesh.cell_nodes)
    out.append(f"CELL_TYPES {nc}")
    out.extend([str(VTK_QUAD)] * nc)
    if cell_data:
        out.append(f"CELL_DATA {nc}")
        _data_block(out, nc, cell_data)
    path.write_text("\n".join(out) + "\n")
    return path


def write_vtk_fault(path, layers, x_positions, cell_data: dict | None = None, title: str = "faultflow fault") -> Path:
    """Poly-line data, one segment per fault layer cell, layer 1 first."""
    path = Path(path)
    pts, lines = [], []
    for layer, x in zip(layers, x_positions):
        start = len(pts)
        pts.extend((x, y) for y in layer.nodes)
        lines.extend((start + k, start + k + 1) for k in range(layer.n_cells))
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET POLYDATA", f"POINTS {len(pts)} double"]
    out.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in pts)
    out.append(f"LINES {len(lines)} {3 * len(lines)}")
    out.extend(f"2 {a} {b}" for a, b in lines)
    if cell_data:
        out.append(f"CELL_DATA {len(lines)}")
        _data_block(out, len(lines), cell_data)
    path.write_text("\n".join(out) + "\n")
    return path


def write_csv(path, rows, columns) -> Path:
    """RFC 4180 table; floats are written with round-trip precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def write_manifest(path, config: dict, extra: dict | None = None) -> Path:
    import scipy

    from . import __version__

    path = Path(path)
    doc = {
        "config": config,
        "versions": {"faultflow": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)
