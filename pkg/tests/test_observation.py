import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdafem.assembly import LinearSystem, mass_matrix, stiffness_matrix
from cdafem.drivers.base import RunConfig
from cdafem.drivers.problems import heat_manufactured
from cdafem.drivers.scalar import heat_cda_run
from cdafem.fem import build_space, interpolate_nodal
from cdafem.linalg import factorize
from cdafem.mesh import barycentric_refine, shear_channel_mesh, uniform_rect_mesh
from cdafem.observation import (AlignmentError, apply_IH, build_coarse_grid, build_observation, direct_enforce,
                                estimate_interp_constant, nudging_contribution)


@pytest.fixture(scope="module")
def p1_square8():
    return build_space(uniform_rect_mesh(8, 8), 1)


def test_single_cell_nudging_matrix_is_outer_product(p2_square8):
    obs = build_observation(p2_square8, 1.0, mu=1.0)
    assert obs.n_cells == 1
    m = np.asarray(mass_matrix(p2_square8).sum(axis=1)).ravel()
    np.testing.assert_allclose(obs.nudging_matrix.toarray(), np.outer(m, m), atol=1e-13)


def test_constants_are_reproduced(p2_square8):
    obs = build_observation(p2_square8, 0.25, mu=1.0)
    np.testing.assert_allclose(apply_IH(obs, 2.5 * np.ones(p2_square8.n_dofs)), 2.5, atol=1e-14)
    assert not np.any(apply_IH(obs, np.zeros(p2_square8.n_dofs)))


def test_aligned_grid_cell_count():
    s = build_space(uniform_rect_mesh(27, 27), 1)
    obs = build_observation(s, 1 / 9, mu=1.0)
    assert obs.n_cells == 81
    assert obs.grid.aligned


def test_unaligned_grid_rejected_unless_allowed(p2_square8):
    with pytest.raises(AlignmentError, match="multiple"):
        build_observation(p2_square8, 1 / 9, mu=1.0)
    obs = build_observation(p2_square8, 1 / 9, mu=1.0, allow_unaligned=True)
    assert obs.n_cells == 81 and not obs.grid.aligned
    assert abs(obs.D.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(np.asarray(obs.C.sum(axis=1)).ravel(), obs.D, atol=1e-12)


def test_mean_of_x_over_one_cell(p2_square8):
    obs = build_observation(p2_square8, 1.0, mu=1.0)
    v = interpolate_nodal(lambda x, y, t: x, p2_square8)
    assert apply_IH(obs, v)[0] == pytest.approx(0.5, abs=1e-15)


def test_lift_idempotence(p2_square8, rng):
    obs = build_observation(p2_square8, 0.25, mu=1.0)
    avg = obs.apply_IH(rng.standard_normal(p2_square8.n_dofs))
    boxes = obs.grid.boxes

    def lift(x, y, t):
        out = np.zeros_like(x)
        for k, (x0, x1, y0, y1) in enumerate(boxes):
            out[(x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)] = avg[k]
        return out

    np.testing.assert_allclose(obs.truth_averages(lift), avg, atol=1e-13)


def test_apply_IH_dimension_mismatch(p2_square8):
    obs = build_observation(p2_square8, 0.5, mu=1.0)
    with pytest.raises(ValueError):
        obs.apply_IH(np.zeros(3))


def test_row_sums_are_cell_measures():
    s = build_space(barycentric_refine(uniform_rect_mesh(6, 6)), 2)
    obs = build_observation(s, 1 / 3, mu=1.0)
    np.testing.assert_allclose(np.asarray(obs.C.sum(axis=1)).ravel(), obs.D, atol=1e-12)
    assert abs(obs.D.sum() - 1.0) < 1e-12


@pytest.mark.parametrize("mode", ["galerkin", "lumped", "nodal"])
def test_nudging_matrix_symmetric_psd_low_rank(mode, p1_square8, rng):
    obs = build_observation(p1_square8, 0.25, mu=1.0, mode=mode)
    N = obs.nudging_matrix.toarray()
    assert np.abs(N - N.T).max() <= 1e-14
    for _ in range(100):
        v = rng.standard_normal(p1_square8.n_dofs)
        assert v @ N @ v >= -1e-14
    if mode == "galerkin":
        assert np.linalg.matrix_rank(N) <= obs.n_cells
    else:
        assert np.count_nonzero(N - np.diag(np.diag(N))) == 0


def test_nudging_contribution_examples(p1_square8):
    obs0 = build_observation(p1_square8, 0.25, mu=0.0)
    Nmat, rhs = nudging_contribution(obs0, np.ones(obs0.n_cells))
    assert abs(Nmat).max() == 0.0 and not np.any(rhs)

    obs = build_observation(p1_square8, 0.25, mu=1.0)
    one = np.ones(p1_square8.n_dofs)
    assert one @ (obs.nudging_matrix @ one) == pytest.approx(1.0, abs=1e-13)

    obs = build_observation(p1_square8, 0.25, mu=7.0)
    w = interpolate_nodal(lambda x, y, t: np.sin(3 * x) + y, p1_square8)
    Nmat, rhs = nudging_contribution(obs, obs.apply_IH(w))
    assert np.abs(Nmat @ w - rhs).max() < 1e-12


def test_lumped_matrix_is_column_sum_diagonal(p1_square8):
    obs = build_observation(p1_square8, 0.25, mu=3.0, mode="lumped")
    Nmat, _ = nudging_contribution(obs, np.zeros(obs.n_cells))
    np.testing.assert_allclose(Nmat.diagonal(), 3.0 * np.asarray(obs.C.sum(axis=0)).ravel(), atol=1e-15)


def test_nodal_mode_weights_and_consistency(p2_square8):
    obs = build_observation(p2_square8, 0.25, mu=2.0, mode="nodal")
    # each box hands a quarter of its measure to each corner
    assert obs.grid.node_weights.sum() == pytest.approx(1.0, abs=1e-14)
    w = interpolate_nodal(lambda x, y, t: x * y + 1, p2_square8)
    Nmat, rhs = nudging_contribution(obs, obs.nodal_values(w))
    assert np.abs(Nmat @ w - rhs).max() < 1e-13
    with pytest.raises(ValueError):
        nudging_contribution(obs, np.zeros(obs.n_cells))


def test_infinite_mu_has_no_addend(p2_square8):
    obs = build_observation(p2_square8, 0.25)
    assert obs.mode == "direct"
    with pytest.raises(ValueError):
        nudging_contribution(obs, np.zeros(obs.n_cells))


def test_inconsistent_mode_rejected(p2_square8):
    with pytest.raises(ValueError):
        build_observation(p2_square8, 0.25, mu=1.0, mode="direct")
    with pytest.raises(ValueError):
        build_observation(p2_square8, 0.25, mu=-1.0)
    with pytest.raises(ValueError):
        build_observation(p2_square8, 0.25, mu=1.0, mode="spectral")


def test_direct_enforce_zero_truth(p2_square8):
    obs = build_observation(p2_square8, 0.25)
    s = p2_square8
    sys = LinearSystem(mass_matrix(s) + stiffness_matrix(s), np.ones(s.n_dofs))
    sys = direct_enforce(sys, obs, lambda x, y, t: 0 * x)
    x = factorize(sys.matrix).solve(sys.rhs)
    assert np.all(x[obs.measurement_dofs] == 0.0)
    assert len(obs.measurement_dofs) == 25


def test_measurement_nodes_are_fine_vertices():
    m = uniform_rect_mesh(12, 12)
    grid = build_coarse_grid(m, 0.25)
    d = np.linalg.norm(m.vertices[grid.node_vertices] - grid.vertex_nodes, axis=1)
    assert d.max() < 1e-12


def test_unaligned_nodes_snap_to_nearest_vertex():
    m = uniform_rect_mesh(10, 10)
    with pytest.raises(AlignmentError):
        build_coarse_grid(m, 0.25)
    grid = build_coarse_grid(m, 0.25, allow_unaligned=True)
    d = np.linalg.norm(m.vertices[grid.node_vertices] - grid.vertex_nodes, axis=1)
    assert d.max() <= 0.05 * math.sqrt(2) + 1e-12


def test_channel_grid_partitions_domain():
    m = shear_channel_mesh(44, 4)
    grid = build_coarse_grid(m, 4 * np.pi / 22, allow_unaligned=True)
    assert abs(grid.measures.sum() - 4 * np.pi) < 1e-10


def test_interp_constant_for_linear_function():
    s = build_space(uniform_rect_mesh(16, 16), 2)
    obs = build_observation(s, 0.25, mu=1.0)
    c = estimate_interp_constant(s, obs, battery=[("x", lambda x, y, t: x)])
    assert c == pytest.approx(1 / (2 * math.sqrt(3)), rel=1e-10)


def test_interp_constant_stable_under_refinement():
    s = build_space(uniform_rect_mesh(32, 32), 2)
    vals = [estimate_interp_constant(s, build_observation(s, H, mu=1.0)) for H in (1 / 4, 1 / 8, 1 / 16)]
    assert max(vals) / min(vals) < 1.1


def test_interp_constant_rejects_flat_function(p2_square8):
    obs = build_observation(p2_square8, 0.25, mu=1.0)
    with pytest.raises(ValueError, match="zero gradient"):
        estimate_interp_constant(p2_square8, obs, battery=[("one", lambda x, y, t: 1 + 0 * x)])


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 4), seed=st.integers(0, 2 ** 31))
def test_IH_contraction_and_orthogonality(k, seed):
    rng = np.random.default_rng(seed)
    s = build_space(uniform_rect_mesh(8, 8), 2)
    obs = build_observation(s, k / 8, mu=1.0, allow_unaligned=True)
    M = mass_matrix(s)
    v = rng.standard_normal(s.n_dofs)
    assert obs.lifted_norm(obs.apply_IH(v)) <= math.sqrt(v @ (M @ v)) * (1 + 1e-12)


@pytest.mark.xfail(strict=True, reason="cell-average nudging tends to average constraints, not the nodal pins "
                                       "of direct enforcement; the gap is about 1.5e-3")
def test_galerkin_large_mu_matches_direct():
    s = build_space(barycentric_refine(uniform_rect_mesh(32, 32)), 2)
    cfg = RunConfig(problem="heat", dt=0.001, T=0.3, n=32, H=1 / 9, allow_unaligned=True)
    u = heat_manufactured()
    direct = heat_cda_run(cfg, build_observation(s, 1 / 9, allow_unaligned=True), u)
    nudged = heat_cda_run(cfg, build_observation(s, 1 / 9, mu=1e8, mode="galerkin", allow_unaligned=True), u)
    assert abs(nudged.final_l2 - direct.final_l2) <= 1e-3 * direct.final_l2
