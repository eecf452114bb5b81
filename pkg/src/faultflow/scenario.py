"""Problem data: mesh family, materials, fault coefficients, boundary conditions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .mesh import Mesh, build_cartesian, build_two_block

MATRIX_TAGS = ("left", "right", "bottom", "top")
FAULT_TAGS = ("fault_bottom", "fault_top")
ADJACENT = "adjacent"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet pressure or Neumann outward flux per unit length.

    ``value`` is a number, or a callable of physical (n, 2) coordinates.
    """

    kind: str = "neumann"
    value: float | Callable = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ScenarioError(f"unknown boundary condition kind {self.kind!r}")

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    def evaluate(self, xy: np.ndarray) -> np.ndarray:
        if callable(self.value):
            return np.asarray(self.value(xy), dtype=float) * np.ones(len(xy))
        return np.full(len(xy), float(self.value))


def dirichlet(value=0.0) -> BoundaryCondition:
    return BoundaryCondition("dirichlet", value)


def neumann(value=0.0) -> BoundaryCondition:
    return BoundaryCondition("neumann", value)


@dataclass(frozen=True)
class Affine:
    """p(x) = value + gradient . x, usable as a boundary value."""

    gradient: tuple = (0.0, 0.0)
    value: float = 0.0

    def __call__(self, xy):
        xy = np.asarray(xy, dtype=float)
        return self.value + xy @ np.asarray(self.gradient, dtype=float)


@dataclass(frozen=True)
class Profile:
    """Piecewise constant function of y: ``default`` outside the bands.

    Bands are ``(y_lo, y_hi, value)``, half-open on the right; later bands win.
    """

    default: float
    bands: tuple = ()

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, float(self.default))
        for lo, hi, v in self.bands:
            out[(y >= lo) & (y < hi)] = v
        return out

    def scaled(self, c: float) -> "Profile":
        return Profile(self.default * c, tuple((lo, hi, v * c) for lo, hi, v in self.bands))


def as_profile(v) -> Profile | str:
    if isinstance(v, (Profile, str)):
        return v
    return Profile(float(v))


@dataclass(frozen=True)
class MaterialBand:
    """Horizontal stratum in block-reference coordinates, optionally on one side only."""

    y_lo: float
    y_hi: float
    perm: np.ndarray
    cphi: float | None = None
    subdomain: int | None = None


@dataclass(frozen=True)
class Materials:
    perm: np.ndarray = field(default_factory=lambda: np.eye(2))
    cphi: float = 0.0
    viscosity: float = 1.0
    source: float | Callable = 0.0
    bands: tuple = ()

    def cell_perm(self, mesh: Mesh) -> np.ndarray:
        out = np.broadcast_to(_tensor(self.perm), (mesh.n_cells, 2, 2)).copy()
        y = mesh.cell_reference_center[:, 1]
        for b in self.bands:
            sel = (y >= b.y_lo) & (y < b.y_hi)
            if b.subdomain is not None:
                sel &= mesh.cell_subdomain == b.subdomain
            out[sel] = _tensor(b.perm)
        return out / self.viscosity

    def cell_cphi(self, mesh: Mesh) -> np.ndarray:
        out = np.full(mesh.n_cells, float(self.cphi))
        y = mesh.cell_reference_center[:, 1]
        for b in self.bands:
            if b.cphi is None:
                continue
            sel = (y >= b.y_lo) & (y < b.y_hi)
            if b.subdomain is not None:
                sel &= mesh.cell_subdomain == b.subdomain
            out[sel] = b.cphi
        return out

    def cell_source(self, mesh: Mesh, xy: np.ndarray) -> np.ndarray:
        if callable(self.source):
            return np.asarray(self.source(xy), dtype=float) * np.ones(mesh.n_cells)
        return np.full(mesh.n_cells, float(self.source))


def _tensor(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        return p * np.eye(2)
    if p.shape == (2,):
        return np.diag(p)
    return p


@dataclass(frozen=True)
class FaultSpec:
    """Fault thickness and physical permeabilities.

    ``lam_n``/``lam_tau`` are profiles in y (block-reference coordinates of
    each layer), a pair of profiles for per-layer values, or ``"adjacent"``
    to copy the permeability of the neighbouring matrix cell.  ``cphi`` and
    ``source`` (volumetric) follow the same rules.
    """

    thickness: float = 1e-2
    lam_n: object = 1.0
    lam_tau: object = 1.0
    cphi: object = ADJACENT
    source: float = 0.0

    def __post_init__(self):
        if not self.thickness > 0:
            raise ScenarioError(f"fault thickness must be positive, got {self.thickness}")
        for name in ("lam_n", "lam_tau"):
            v = getattr(self, name)
            vals = v if isinstance(v, tuple) else (v,)
            for p in vals:
                p = as_profile(p)
                if isinstance(p, str):
                    if p != ADJACENT:
                        raise ScenarioError(f"{name}: unknown keyword {p!r}")
                    continue
                if p.default <= 0 or any(b[2] <= 0 for b in p.bands):
                    raise ScenarioError(f"{name} must be strictly positive")

    def layer_profile(self, name: str, layer: int):
        v = getattr(self, name)
        if isinstance(v, tuple):
            v = v[layer - 1]
        return as_profile(v)


@dataclass(frozen=True)
class MeshSpec:
    kind: str = "cartesian"
    nx_left: int = 16
    ny_left: int = 16
    nx_right: int | None = None
    ny_right: int | None = None
    bbox: tuple = (0.0, 0.0, 1.0, 1.0)
    split_x: float = 0.5
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cartesian", "two_block"):
            raise ScenarioError(f"unknown mesh kind {self.kind!r}")

    def build(self, offset: float | None = None) -> Mesh:
        if self.kind == "cartesian":
            return build_cartesian(self.nx_left, self.ny_left, self.bbox, self.split_x)
        return build_two_block(self.nx_left, self.ny_left, self.nx_right or self.nx_left,
                               self.ny_right or self.ny_left, self.bbox, self.split_x,
                               self.offset if offset is None else offset)

    def refined(self, factor: int) -> "MeshSpec":
        def mul(v):
            return None if v is None else v * factor
        return replace(self, nx_left=self.nx_left * factor, ny_left=self.ny_left * factor,
                       nx_right=mul(self.nx_right), ny_right=mul(self.ny_right))


@dataclass(frozen=True)
class TransientSpec:
    """Implicit Euler schedule: one time step and one block offset per step.

    ``initial_bc`` overrides boundary conditions for the steady initial
    solve, during which the fault copies its neighbours' permeability.
    """

    dt: tuple = ()
    offsets: tuple = ()
    initial_bc: dict = field(default_factory=dict)
    near_fault_width: float = 0.0

    def __post_init__(self):
        if len(self.dt) != len(self.offsets):
            raise ScenarioError("transient schedule needs as many offsets as time steps")
        if any(not t > 0 for t in self.dt):
            raise ScenarioError("time steps must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    mesh: MeshSpec = field(default_factory=MeshSpec)
    materials: Materials = field(default_factory=Materials)
    fault: FaultSpec = field(default_factory=FaultSpec)
    bc: dict = field(default_factory=dict)
    alpha: float = 1.0
    alpha_hat: float = 1.0
    transient: TransientSpec | None = None
    exact: Callable | None = None

    def __post_init__(self):
        unknown = set(self.bc) - set(MATRIX_TAGS) - set(FAULT_TAGS)
        if unknown:
            raise ScenarioError(f"unknown boundary tags {sorted(unknown)}")
        if self.alpha < 0 or self.alpha_hat < 0:
            raise ScenarioError("stabilization parameters must be nonnegative")

    def condition(self, tag: str) -> BoundaryCondition:
        return self.bc.get(tag, neumann())

    def with_mesh(self, mesh: MeshSpec) -> "ScenarioSpec":
        return replace(self, mesh=mesh)

    def bc_range(self) -> tuple:
        """Range of constant Dirichlet data, used for the max principle."""
        vals = [float(c.value) for c in self.bc.values() if c.is_dirichlet and not callable(c.value)]
        if not vals:
            raise ScenarioError("no constant Dirichlet data")
        return min(vals), max(vals)


# shipped scenarios ---------------------------------------------------------

def patch_scenario(n=4, gradient=(1.0, 0.5), matching=True, mesh_kind=None) -> ScenarioSpec:
    """Affine field through a fault whose permeability equals the matrix."""
    p = Affine(gradient, 0.25)
    nr = n if matching else 2 * n
    kind = mesh_kind or ("cartesian" if matching else "two_block")
    bc = {t: dirichlet(p) for t in MATRIX_TAGS + FAULT_TAGS}
    return ScenarioSpec("patch", MeshSpec(kind, n, n, nr, nr), Materials(np.eye(2)),
                        FaultSpec(1e-2, 1.0, 1.0), bc, exact=p)


def series_scenario(n=64, d=1e-2, lam_n=1.0) -> ScenarioSpec:
    """Horizontal flow through the fault, a 1D resistance network."""
    return ScenarioSpec("series", MeshSpec("cartesian", n, n), Materials(np.eye(2)),
                        FaultSpec(d, lam_n, 1.0),
                        {"left": dirichlet(0.0), "right": dirichlet(1.0)})


def partially_impermeable_scenario(n=32, nonmatching=False) -> ScenarioSpec:
    low = Profile(1.0, ((0.25, 0.75, 1e-2),))
    mesh = MeshSpec("two_block", n // 2, n, 2 * n, 4 * n) if nonmatching else MeshSpec("cartesian", n, n)
    return ScenarioSpec("partially_impermeable", mesh, Materials(np.eye(2)), FaultSpec(1e-2, low, low),
                        {"left": dirichlet(0.0), "right": dirichlet(1.0)})


def conductive_scenario(n=32, nonmatching=False) -> ScenarioSpec:
    mesh = MeshSpec("two_block", n // 2, n, 2 * n, 4 * n) if nonmatching else MeshSpec("cartesian", n, n)
    return ScenarioSpec("conductive", mesh, Materials(np.eye(2)), FaultSpec(1e-2, 1.0, 1e-2),
                        {"left": dirichlet(0.0), "right": dirichlet(1.0),
                         "fault_bottom": dirichlet(0.0), "fault_top": dirichlet(1.0)})


def anisotropic_scenario(ratio=1, lam_f=100.0) -> ScenarioSpec:
    seg = ((0.25, 0.75, lam_f),)
    lam_n = Profile(1.0 / lam_f, seg)
    lam_tau = Profile(lam_f, ((0.25, 0.75, 1.0 / lam_f),))
    mesh = MeshSpec("two_block", 2, 4, 2 * ratio, 4 * ratio)
    return ScenarioSpec("anisotropic", mesh, Materials(np.eye(2)), FaultSpec(1e-2, lam_n, lam_tau),
                        {"left": dirichlet(0.0), "right": dirichlet(1.0),
                         "fault_bottom": dirichlet(0.0), "fault_top": dirichlet(1.0)})
