import warnings

import numpy as np
import pytest

from faultflow.fault import (LAYER, MID, TRACE, FaultError, FaultGeometry, FaultLayerGrid, effective_coefficients,
                             extract_layer_grids, extrude_virtual_cells, fault_geometry, intersect_partitions,
                             normal_discrepancy)
from faultflow.mesh import build_cartesian, build_two_block


def layer(nodes, side=1):
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes) - 1
    return FaultLayerGrid(side, 0.5, np.arange(n), np.arange(n), nodes)


def test_layer_grids_matching():
    l1, l2 = extract_layer_grids(build_two_block(2, 2, 2, 2))
    np.testing.assert_allclose(l1.nodes, l2.nodes)
    assert (l1.layer, l2.layer) == (1, 2)


def test_layer_grids_nonmatching():
    l1, l2 = extract_layer_grids(build_two_block(2, 2, 8, 8))
    assert (l1.n_cells, l2.n_cells) == (2, 8)


def test_layer_grids_offset():
    l1, l2 = extract_layer_grids(build_two_block(2, 2, 2, 2, vertical_offset=0.25))
    assert l2.y_range[0] - l1.y_range[0] == pytest.approx(0.25)
    assert l2.y_range[1] - l1.y_range[1] == pytest.approx(0.25)


def test_no_fault_is_an_error():
    with pytest.raises(FaultError):
        fault_geometry(build_cartesian(2, 2), 0.01)


def test_geometry_validation():
    with pytest.raises(FaultError):
        FaultGeometry(0.5, (0.0, 1.0), 0.0)
    with pytest.warns(UserWarning):
        FaultGeometry(0.5, (0.0, 1.0), 0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        FaultGeometry(0.5, (0.0, 1.0), 0.01)


def test_effective_coefficients():
    c = effective_coefficients(1.0, 1e-2, 1e-2)
    assert c.lam_hat == pytest.approx(5e-5)
    assert c.lam_gamma == pytest.approx(200.0)
    c = effective_coefficients(3.0, 3.0, 2.0)
    assert (c.lam_hat, c.lam_gamma) == (pytest.approx(3.0), pytest.approx(3.0))


@pytest.mark.parametrize("bad", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)])
def test_effective_coefficients_positive(bad):
    with pytest.raises(FaultError):
        effective_coefficients(*bad)


def test_effective_coefficients_per_segment():
    lam_f = 100.0
    c = effective_coefficients(np.array([1 / lam_f, lam_f]), np.array([lam_f, 1 / lam_f]), 1e-2)
    np.testing.assert_allclose(c.lam_gamma, [2.0, 2e4])
    np.testing.assert_allclose(c.lam_hat, [0.5, 5e-5])


def test_intersection_refines():
    p = intersect_partitions(layer([0, 0.5, 1]), layer([0, 0.25, 1], 2))
    np.testing.assert_allclose(p.y_lo, [0, 0.25, 0.5])
    np.testing.assert_allclose(p.y_hi, [0.25, 0.5, 1])
    np.testing.assert_array_equal(p.cell1, [0, 0, 1])
    np.testing.assert_array_equal(p.cell2, [0, 1, 1])
    assert not p.is_matching


def test_intersection_identical():
    p = intersect_partitions(layer([0, 0.3, 1]), layer([0, 0.3, 1], 2))
    assert p.is_matching
    np.testing.assert_array_equal(p.cell1, p.cell2)


def test_intersection_shifted_ranges():
    p = intersect_partitions(layer([0, 1]), layer([0.25, 1.25], 2))
    np.testing.assert_allclose(p.y_lo, [0, 0.25, 1])
    np.testing.assert_allclose(p.y_hi, [0.25, 1, 1.25])
    np.testing.assert_array_equal(p.cell1, [0, 0, -1])
    np.testing.assert_array_equal(p.cell2, [-1, 0, 0])
    np.testing.assert_array_equal(p.shared, [False, True, False])


def test_intersection_merges_slivers():
    p = intersect_partitions(layer([0, 0.5, 1]), layer([0, 0.5 + 1e-15, 1], 2))
    assert p.n_faces == 2


def test_extrusion_rectangle():
    l1, l2 = layer([0, 0.5, 1]), layer([0, 0.25, 1], 2)
    p = intersect_partitions(l1, l2)
    g = extrude_virtual_cells((l1, l2), p, FaultGeometry(0.5, (0, 1), 1e-2))
    np.testing.assert_allclose(g.rectangles()[0], [0.5 - 5e-3, 0, 0.5, 0.5])
    assert g.cell_area[0] == pytest.approx(2.5e-3)
    # layer 1 cell [0, .5] sees the sub-faces [0, .25] and [.25, .5]
    s = slice(g.cone_ptr[0], g.cone_ptr[1])
    kinds = g.cone_kind[s]
    assert list(kinds[:3]) == [TRACE, LAYER, LAYER]
    mids = g.cone_ref[s][kinds == MID]
    np.testing.assert_allclose(p.y_lo[mids], [0, 0.25])
    np.testing.assert_allclose(p.y_hi[mids], [0.25, 0.5])


def test_extrusion_matching_one_mid_face():
    l1, l2 = extract_layer_grids(build_two_block(3, 5, 3, 5))
    g = extrude_virtual_cells((l1, l2), intersect_partitions(l1, l2), FaultGeometry(0.5, (0, 1), 1e-2))
    counts = np.bincount(g.cone_cell[g.cone_kind == MID], minlength=g.n_cells)
    assert np.all(counts == 1)


def test_extrusion_cells_closed():
    l1, l2 = extract_layer_grids(build_two_block(2, 3, 4, 7, vertical_offset=0.1))
    g = extrude_virtual_cells((l1, l2), intersect_partitions(l1, l2), FaultGeometry(0.5, (0, 1.1), 1e-2))
    w = g.cone_length[:, None] * g.cone_normal
    s = np.column_stack([np.bincount(g.cone_cell, w[:, k]) for k in range(2)])
    assert np.abs(s).max() < 1e-14


def test_normal_discrepancy():
    for n in (2, 4, 8):
        l1, l2 = extract_layer_grids(build_two_block(n, n, 2 * n, 2 * n))
        g = extrude_virtual_cells((l1, l2), intersect_partitions(l1, l2), FaultGeometry(0.5, (0, 1), 1e-2))
        assert normal_discrepancy(g) == 0.0
    mid = np.flatnonzero(g.cone_kind == MID)[0]
    g.cone_normal[mid] += (0.0, 0.3)
    assert normal_discrepancy(g) == pytest.approx(0.3)


def test_locate():
    lay = layer([0, 0.5, 1])
    np.testing.assert_array_equal(lay.locate([-0.1, 0.0, 0.5, 0.99, 1.0, 1.1]), [-1, 0, 1, 1, 1, -1])
