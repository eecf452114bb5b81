import numpy as np
import pytest

from faultflow import hfv
from faultflow.fault import FaultLayerGrid
from faultflow.mesh import build_cartesian, build_two_block


@pytest.fixture
def square():
    return hfv.cones_from_mesh(build_cartesian(1, 1))


def unit_values(cones, faces):
    face = np.zeros(cones.n_faces)
    face[faces] = 1.0
    return hfv.HybridValues(np.zeros(cones.n_cells), face)


def left_face(cones):
    return int(cones.face[np.flatnonzero(cones.normal[:, 0] < -0.5)[0]])


def brute_force_stiffness(centre, faces, area, perm, alpha):
    """Cone sum with hand-written gradients; faces are (centre, length, normal)."""
    m = len(faces)
    A = np.zeros((m + 1, m + 1))

    def grads(u):
        vK, vs = u[0], u[1:]
        g = sum(L * (vs[i] - vK) * n for i, (x, L, n) in enumerate(faces)) / area
        out = []
        for i, (x, L, n) in enumerate(faces):
            d = np.dot(x - centre, n)
            r = alpha * np.sqrt(2) / d * (vs[i] - vK - g @ (x - centre))
            out.append((g + r * n, L * d / 2))
        return out

    basis = np.eye(m + 1)
    for a in range(m + 1):
        for b in range(m + 1):
            A[a, b] = sum(w * ga @ perm @ gb for (ga, w), (gb, _) in zip(grads(basis[a]), grads(basis[b])))
    return A


def test_cell_gradient_constant_and_affine():
    m = build_two_block(3, 4, 5, 6, vertical_offset=0.1)
    c = hfv.cones_from_mesh(m)
    v = hfv.project_pointwise(c, lambda x: np.full(len(x), 3.0))
    assert np.abs(hfv.cell_gradients(c, v)).max() < 1e-12
    a = np.array([0.7, -1.3])
    v = hfv.project_pointwise(c, lambda x: x @ a + 0.2)
    np.testing.assert_allclose(hfv.cell_gradients(c, v), np.tile(a, (m.n_cells, 1)), atol=1e-12)
    assert np.abs(hfv.stabilization_residuals(c, v)).max() < 1e-12
    np.testing.assert_allclose(hfv.cone_gradients(c, v), np.tile(a, (len(c.face), 1)), atol=1e-12)


def test_single_face_hand_values(square):
    lf = left_face(square)
    v = unit_values(square, [lf])
    np.testing.assert_allclose(hfv.cell_gradient(square, 0, v), [-1.0, 0.0], atol=1e-15)
    local = int(np.flatnonzero(square.face[square.cell_slice(0)] == lf)[0])
    assert hfv.stabilization_residual(square, 0, local, v) == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(hfv.cone_gradient(square, 0, local, v), [-1 - np.sqrt(2), 0.0], atol=1e-14)
    assert hfv.stabilization_residual(square, 0, local, v, alpha=0.0) == 0.0


def test_vectorised_matches_per_cell():
    m = build_two_block(2, 3, 3, 5, vertical_offset=0.2)
    c = hfv.cones_from_mesh(m)
    rng = np.random.default_rng(1)
    v = hfv.HybridValues(rng.standard_normal(c.n_cells), rng.standard_normal(c.n_faces))
    g = hfv.cone_gradients(c, v, 0.7)
    for K in range(c.n_cells):
        for i in range(c.ptr[K + 1] - c.ptr[K]):
            np.testing.assert_allclose(hfv.cone_gradient(c, K, i, v, 0.7), g[c.ptr[K] + i], atol=1e-12)


def test_local_stiffness_brute_force(square):
    perm = np.array([[2.0, 0.3], [0.3, 1.0]])
    loc = hfv.local_stiffness(square, 0, perm, 1.0)
    s = square.cell_slice(0)
    faces = [(square.face_center[i], square.face_measure[i], square.normal[i]) for i in range(s.start, s.stop)]
    ref = brute_force_stiffness(square.cell_center[0], faces, 1.0, perm, 1.0)
    np.testing.assert_allclose(loc.matrix, ref, atol=1e-13)


def test_local_stiffness_affine_energy_and_scaling():
    m = build_two_block(1, 1, 1, 3)
    c = hfv.cones_from_mesh(m)
    a = np.array([0.4, 1.1])
    for K in range(m.n_cells):
        loc = hfv.local_stiffness(c, K, np.eye(2))
        x = np.r_[c.cell_center[K] @ a, c.face_center[c.cell_slice(K)] @ a]
        assert x @ loc.matrix @ x == pytest.approx(m.cell_area[K] * a @ a, rel=1e-12)
        scaled = hfv.local_stiffness(c, K, 3.0 * np.eye(2))
        np.testing.assert_allclose(scaled.matrix, 3.0 * loc.matrix, atol=1e-13)
        np.testing.assert_allclose(loc.matrix @ np.ones(len(x)), 0.0, atol=1e-12)


def test_rectangle_reduces_to_two_point_fluxes(square):
    loc = hfv.local_stiffness(square, 0, np.eye(2))
    np.testing.assert_allclose(loc.matrix[1:, 1:], 2.0 * np.eye(4), atol=1e-14)


def test_tangential_stiffness():
    lay = FaultLayerGrid(1, 0.5, np.arange(2), np.arange(2), np.array([0.0, 0.5, 1.0]))
    loc = hfv.tangential_local_stiffness(lay, 0, 5e-5, 1.0)
    t = 5e-5 / 0.25
    ref = t * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    np.testing.assert_allclose(loc.matrix, ref, rtol=1e-12)
    # affine data with slope s over a cell of length l: energy l s^2
    s = 3.0
    x = np.array([0.25 * s, 0.0, 0.5 * s])
    assert x @ hfv.tangential_local_stiffness(lay, 0, 1.0).matrix @ x == pytest.approx(0.5 * s * s)
    np.testing.assert_allclose(loc.matrix @ np.ones(3), 0.0, atol=1e-18)


def test_assembled_operator_symmetric_and_singular_on_constants():
    m = build_two_block(2, 3, 4, 5)
    c = hfv.cones_from_mesh(m)
    A = hfv.assemble_operator(c, np.eye(2), 1.0, np.arange(m.n_cells), m.n_cells + np.arange(m.n_faces),
                              m.n_cells + m.n_faces)
    assert abs(A - A.T).max() < 1e-14
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12


def test_energy_matches_operator():
    m = build_cartesian(3, 2)
    c = hfv.cones_from_mesh(m)
    rng = np.random.default_rng(2)
    v = hfv.HybridValues(rng.standard_normal(c.n_cells), rng.standard_normal(c.n_faces))
    A = hfv.assemble_operator(c, np.eye(2), 1.0, np.arange(m.n_cells), m.n_cells + np.arange(m.n_faces),
                              m.n_cells + m.n_faces)
    x = np.r_[v.cell, v.face]
    assert hfv.energy(c, v, np.eye(2)) == pytest.approx(x @ A @ x, rel=1e-12)


def test_semi_norm(square):
    assert hfv.semi_norm(square, unit_values(square, range(4))) == pytest.approx(np.sqrt(8))
    v = hfv.HybridValues(np.full(1, 2.0), np.full(4, 2.0))
    assert hfv.semi_norm(square, v) == 0.0
    v = unit_values(square, [0, 2])
    w = hfv.HybridValues(-3 * v.cell, -3 * v.face)
    assert hfv.semi_norm(square, w) == pytest.approx(3 * hfv.semi_norm(square, v))


def test_discrete_norm_two_cells():
    c = hfv.cones_from_mesh(build_cartesian(2, 1, bbox=(0, 0, 2, 1)))
    assert hfv.discrete_norm_1M(c, np.zeros(2)) == 0.0
    # interior face: 1 * 1^2 / 1; boundary faces of the cell with value 1:
    # right, top and bottom 1 * 1^2 / (1/2) each
    assert hfv.discrete_norm_1M(c, np.array([0.0, 1.0])) ** 2 == pytest.approx(1.0 + 3 * 2.0)


def test_discrete_norm_bounded_by_semi_norm():
    m = build_cartesian(4, 4)
    c = hfv.cones_from_mesh(m)
    bnd = np.flatnonzero(m.face_cells[:, 1] < 0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        face = rng.standard_normal(c.n_faces)
        face[bnd] = 0.0
        v = hfv.HybridValues(rng.standard_normal(c.n_cells), face)
        assert hfv.discrete_norm_1M(c, hfv.project_cellwise(v)) <= hfv.semi_norm(c, v) * (1 + 1e-12)


def test_projections():
    c = hfv.cones_from_mesh(build_cartesian(2, 2))
    v = hfv.project_pointwise(c, lambda x: np.ones(len(x)))
    assert np.all(v.cell == 1) and np.all(v.face == 1)
    v = hfv.project_pointwise(c, lambda x: x[:, 0] + 2 * x[:, 1])
    np.testing.assert_allclose(hfv.project_cellwise(v), c.cell_center @ [1, 2])
    lay = FaultLayerGrid(1, 0.5, np.arange(4), np.arange(4), np.linspace(0, 1, 5))
    v = hfv.project_pointwise(hfv.cones_from_layer(lay), lambda y: y[:, 0])
    np.testing.assert_allclose(v.cell, [0.125, 0.375, 0.625, 0.875])


def test_spd_check():
    with pytest.raises(hfv.HfvError):
        hfv.check_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), 2)
    with pytest.raises(hfv.HfvError):
        hfv.check_spd(np.array([[1.0, 0.1], [0.0, 1.0]]), 2)
