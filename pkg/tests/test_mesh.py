import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdafem.mesh import (MeshError, barycentric_refine, check_mesh, identify_periodic_x, read_mesh_arrays,
                         shear_channel_mesh, uniform_rect_mesh, write_mesh)
from cdafem.fem import build_space


def test_unit_square_counts():
    m = uniform_rect_mesh(1, 1)
    assert (m.n_vertices, m.n_cells) == (4, 2)
    assert uniform_rect_mesh(32, 32).n_cells == 2048


def test_stretched_rect_cell_areas():
    m = uniform_rect_mesh(2, 1, (0.0, 1.0, 0.0, 0.5))
    np.testing.assert_allclose(m.signed_areas, 1 / 8, rtol=0, atol=1e-15)


def test_diagonal_runs_lower_left_to_upper_right():
    m = uniform_rect_mesh(1, 1)
    shared = set(m.cells[0]) & set(m.cells[1])
    pts = {tuple(m.vertices[v]) for v in shared}
    assert pts == {(0.0, 0.0), (1.0, 1.0)}


def test_barycentric_counts_and_area():
    m = barycentric_refine(uniform_rect_mesh(1, 1))
    assert (m.n_vertices, m.n_cells) == (6, 6)
    check_mesh(m, area=1.0, tol=1e-14)


def test_shear_channel_maps_vertices():
    m = shear_channel_mesh(8, 2)
    v = m.vertices
    for (x, y), want in (((0, 0), (0, 0)), ((0, 1), (0, 1))):
        assert np.any(np.all(np.abs(v - want) < 1e-15, axis=1))
    # base vertex (pi/2, 0) moves to (pi/2, 1)
    assert np.any(np.all(np.abs(v - (np.pi / 2, 1.0)) < 1e-12, axis=1))
    check_mesh(m, area=4 * np.pi, tol=1e-12)
    assert set(m.markers) == {"inflow", "outflow", "bottom", "top"}


def test_periodic_pairs_and_classes():
    m = identify_periodic_x(uniform_rect_mesh(4, 4))
    assert len(m.periodic_pairs) == 5
    assert m.n_vertex_classes == 4 * 5
    p = m.periodic_pairs
    np.testing.assert_allclose(m.vertices[p[:, 0], 1], m.vertices[p[:, 1], 1], atol=1e-12)
    np.testing.assert_allclose(m.vertices[p[:, 1], 0] - m.vertices[p[:, 0], 0], 1.0, atol=1e-12)


def test_periodic_mismatch():
    m = uniform_rect_mesh(4, 4)
    v = m.vertices.copy()
    right = np.unique(m.marked_edges("right"))
    mid = right[np.argsort(v[right, 1])][2]
    v[mid, 1] += 0.01
    bad = type(m)(vertices=v, cells=m.cells, boundary_edges=m.boundary_edges, edge_markers=m.edge_markers)
    with pytest.raises(MeshError, match="periodic mismatch"):
        identify_periodic_x(bad)


def test_periodic_space_dofs():
    m = identify_periodic_x(uniform_rect_mesh(6, 4))
    assert build_space(m, 1).n_dofs == 6 * 5
    # P2 on the periodic strip: (2nx)(2ny+1) nodes
    assert build_space(m, 2).n_dofs == 12 * 9


def test_mesh_export_round_trip(tmp_path):
    m = shear_channel_mesh(5, 2)
    write_mesh(m, tmp_path / "m.txt")
    v, c = read_mesh_arrays(tmp_path / "m.txt")
    assert np.array_equal(v, m.vertices)
    assert np.array_equal(c, m.cells)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == f"vertices {m.n_vertices} cells {m.n_cells}"


def test_check_mesh_rejects_flipped_cell():
    m = uniform_rect_mesh(2, 2)
    cells = m.cells.copy()
    cells[0] = cells[0, ::-1]
    bad = type(m)(vertices=m.vertices, cells=cells, boundary_edges=m.boundary_edges, edge_markers=m.edge_markers)
    with pytest.raises(MeshError):
        check_mesh(bad)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 12), ny=st.integers(1, 12), refine=st.booleans(),
       w=st.floats(0.1, 5.0), h=st.floats(0.1, 5.0))
def test_generated_meshes_are_valid(nx, ny, refine, w, h):
    m = uniform_rect_mesh(nx, ny, (0.0, w, 0.0, h))
    if refine:
        m = barycentric_refine(m)
    check_mesh(m, area=w * h, tol=1e-12)
    counts = m.edge_cell_counts
    assert set(np.unique(counts)) <= {1, 2}
    assert np.sum(counts == 1) == len(m.boundary_edges)


@settings(max_examples=10, deadline=None)
@given(nx=st.integers(1, 30), ny=st.integers(1, 6))
def test_shear_preserves_area(nx, ny):
    m = shear_channel_mesh(nx, ny)
    assert np.all(m.signed_areas > 0)
    assert math.isclose(m.area, 4 * np.pi, rel_tol=1e-12)
