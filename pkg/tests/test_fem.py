import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdafem.fem import basis, build_space, composite_rule, eval_basis, interpolate_nodal, quadrature
from cdafem.mesh import barycentric_refine, identify_periodic_x, locate_points, uniform_rect_mesh


def monomial_integral(a, b, c) -> Fraction:
    """Exact integral of l0^a l1^b l2^c over the reference triangle (area 1/2)."""
    return Fraction(math.factorial(a) * math.factorial(b) * math.factorial(c), math.factorial(a + b + c + 2))


@pytest.mark.parametrize("n", [1, 4, 7])
def test_p2_dof_count(n):
    assert build_space(uniform_rect_mesh(n, n), 2).n_dofs == (2 * n + 1) ** 2


def test_small_space_counts():
    m = uniform_rect_mesh(1, 1)
    assert build_space(m, 1).n_dofs == 4
    assert build_space(m, 2, 2).n_dofs == 18


def test_unsupported_degree():
    with pytest.raises(ValueError):
        build_space(uniform_rect_mesh(1, 1), 3)


def test_p1_at_barycenter():
    vals, _ = eval_basis(1, [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(vals, 1 / 3, atol=1e-15)


def test_p2_nodal_property():
    vals, _ = eval_basis(2, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(vals, [1, 0, 0, 0, 0, 0], atol=1e-15)
    vals, _ = eval_basis(2, [0.5, 0.5, 0.0])
    # edge (0, 1) is local edge 0, i.e. local DOF 3
    np.testing.assert_allclose(vals, [0, 0, 0, 1, 0, 0], atol=1e-15)


def test_eval_basis_rejects_non_barycentric():
    with pytest.raises(ValueError):
        eval_basis(1, [0.5, 0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2), st.sampled_from([1, 2]))
def test_partition_of_unity(ab, degree):
    a, b = ab
    if a + b > 1:
        a, b = 1 - a, 1 - b
    vals, grads = basis(degree, np.array([[1 - a - b, a, b]]))
    assert abs(vals.sum() - 1.0) < 1e-14
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-14)


def test_quadrature_examples():
    q1 = quadrature(1)
    assert len(q1) == 1 and q1.weights[0] == pytest.approx(0.5, abs=1e-15)
    q2 = quadrature(2)
    assert len(q2) == 3
    assert np.sum(q2.weights * q2.points[:, 1] * q2.points[:, 2]) == pytest.approx(1 / 24, abs=1e-15)
    q5 = quadrature(5)
    assert len(q5) == 7
    assert np.sum(q5.weights * q5.points[:, 1] ** 5) == pytest.approx(1 / 42, abs=1e-15)


def test_quadrature_unavailable():
    with pytest.raises(ValueError):
        quadrature(11)


@pytest.mark.parametrize("exactness", range(1, 11))
def test_quadrature_exact_on_monomials(exactness):
    rule = quadrature(exactness)
    assert rule.exactness >= exactness
    assert abs(rule.weights.sum() - 0.5) < 1e-15
    assert np.all(rule.weights > 0)
    assert np.all(rule.points >= -1e-15) and np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            for c in range(exactness + 1 - a - b):
                got = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b * rule.points[:, 2] ** c)
                assert abs(got - float(monomial_integral(a, b, c))) < 1e-15


def test_composite_rule_exactness():
    rule = composite_rule(5, 2)
    assert len(rule) == 7 * 16
    assert abs(rule.weights.sum() - 0.5) < 1e-15
    got = np.sum(rule.weights * rule.points[:, 1] ** 5)
    assert abs(got - 1 / 42) < 1e-15


def test_interpolate_examples():
    m = uniform_rect_mesh(4, 4)
    s1 = build_space(m, 1)
    assert not np.any(interpolate_nodal(lambda x, y, t: 0 * x, s1))
    np.testing.assert_array_equal(interpolate_nodal(lambda x, y, t: x, s1), m.vertices[:, 0])
    s2 = build_space(m, 2)
    u = interpolate_nodal(lambda x, y, t: np.sin(t + 2 * np.pi * x + np.pi * y), s2)
    j = np.nonzero(np.all(np.abs(s2.dof_coords - (0.25, 0.0)) < 1e-15, axis=1))[0][0]
    assert u[j] == pytest.approx(1.0, abs=1e-15)


def test_interpolate_rejects_nonfinite():
    s = build_space(uniform_rect_mesh(2, 2), 1)
    with pytest.raises(ValueError):
        interpolate_nodal(lambda x, y, t: np.where(x > 0.5, np.inf, x), s)


@pytest.mark.parametrize("degree,refine", [(1, False), (2, False), (2, True)])
def test_interpolation_reproduces_space_members(degree, refine, rng):
    m = uniform_rect_mesh(5, 3)
    if refine:
        m = barycentric_refine(m)
    s = build_space(m, degree)
    c = rng.standard_normal(s.n_dofs)

    def fe_function(x, y, t):
        pts = np.column_stack([x.ravel(), y.ravel()])
        cell = locate_points(s.mesh, pts, tol=1e-12)
        bary = s.geometry.to_reference(cell, pts)
        return s.eval_at(c, cell, bary).reshape(x.shape)

    np.testing.assert_allclose(interpolate_nodal(fe_function, s), c, atol=1e-13)


def test_boundary_dofs_on_boundary_edges():
    s = build_space(uniform_rect_mesh(3, 5), 2)
    for mk, dofs in s.boundary_dofs.items():
        xy = s.dof_coords[dofs]
        if mk in ("left", "right"):
            assert np.allclose(xy[:, 0], 0.0 if mk == "left" else 1.0, atol=1e-12)
        else:
            assert np.allclose(xy[:, 1], 0.0 if mk == "bottom" else 1.0, atol=1e-12)
    assert s.cell_dofs.max() < s.n_dofs


def test_vector_space_is_component_blocked():
    s = build_space(uniform_rect_mesh(2, 2), 2, 2)
    assert s.n_dofs == 2 * s.n_scalar
    d = np.array([0, 3])
    assert np.array_equal(s.component_dofs(d, 1), d + s.n_scalar)


def test_periodic_space_merges_dofs():
    m = identify_periodic_x(uniform_rect_mesh(4, 2))
    s = build_space(m, 2)
    f = interpolate_nodal(lambda x, y, t: np.cos(2 * np.pi * x) + y, s)
    assert f.shape == (s.n_dofs,)
    assert s.n_dofs == 8 * 5
