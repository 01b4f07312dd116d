import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpmto.analysis import AnalysisModel, element_kernel, objective
from dpmto.basis import gauss_rule, mass_matrix, tabulate
from dpmto.design import BackgroundGrid, Projection, uniform_design
from dpmto.indicators import (IndicatorReport, cell_contributions, density_bounds, density_indicator,
                              energy_ratio_error, kelly, local_refined_solve, pinned_dofs, prolong_load,
                              qr_error, qr_errors, qr_flag, rank_and_flag_analysis)
from dpmto.mesh import build_mesh


def test_rank_and_flag_counts():
    g = np.random.default_rng(0).uniform(size=800)
    theta = rank_and_flag_analysis(g)
    assert (theta == 1).sum() == 80 and (theta == -1).sum() == 40
    assert g[theta == 1].min() > g[theta == 0].max() > g[theta == -1].max()


def test_rank_ties_break_by_index():
    theta = rank_and_flag_analysis(np.zeros(20), 0.1, 0.1)
    assert theta.tolist() == [-1, -1] + [0] * 16 + [1, 1]


def test_density_bounds_decay():
    assert density_bounds(1) == pytest.approx((0.4, 0.6, 0.1, 0.9))
    f = math.exp(-0.8 * 2)
    assert density_bounds(3) == pytest.approx((0.4 * f, 1 - 0.4 * f, 0.1 * f, 1 - 0.1 * f))
    with pytest.raises(ValueError):
        density_bounds(0)


def test_cell_contributions_piecewise():
    b = density_bounds(1)
    rho = np.array([0.0, 0.05, 0.1, 0.3, 0.45, 0.5, 0.55, 0.7, 0.95, 1.0])
    want = [-0.1, -0.05, 0.0, 0.0, 0.05, 0.1, 0.05, 0.0, -0.05, -0.1]
    assert np.allclose(cell_contributions(rho, b), want, atol=1e-15)


@given(st.floats(0, 1))
def test_cell_contribution_sign(r):
    v = float(cell_contributions(np.array([r]), density_bounds(1))[0])
    if 0.4 < r < 0.6:
        assert v > 0
    if r < 0.1 or r > 0.9:
        assert v < 0


def test_density_indicator_averages_element_cells():
    vals = np.array([[0.0, 0.0, 0.5, 0.5], [0.0, 0.0, 0.5, 0.5]]).ravel()
    grid = BackgroundGrid(2, 1, 2, 1.0, vals)
    assert np.allclose(density_indicator(grid, density_bounds(1)), [-0.1, 0.1])


def test_report_rows():
    r = IndicatorReport(2, np.array([1.0, 2.0]), np.array([0.1, -0.1]), np.array([0.0, 0.5]), np.array([0, 1]),
                        density_bounds(2))
    assert r.rows()[1] == (2, 1, 2.0, -0.1, 0.5, 1)


def test_kelly_symmetric_and_positive(cantilever_bcs, mat):
    mesh = build_mesh(6, 3, 2.0, 2, 4)
    proj = Projection(mesh, 0.4)
    system = AnalysisModel(mesh, proj.rules, cantilever_bcs, mat).solve(proj.field(uniform_design(mesh, 1.0)).rho_tilde)
    g = kelly(system)
    assert np.all(g >= 0) and g.max() > 0
    # mirror symmetry about the mid-height line of the cantilever
    grid = g.reshape(3, 6)
    assert np.allclose(grid[0], grid[2], rtol=1e-8)


def _moment(c, load):
    return np.sum(c[:, 0] * load[:, 1] - c[:, 1] * load[:, 0])


def test_prolong_load_preserves_resultant_and_moment():
    rng = np.random.default_rng(0)
    for p in range(1, 5):
        f = rng.normal(size=2 * (p + 1) ** 2)
        g = prolong_load(f, p)
        xp = np.linspace(-1, 1, p + 1)
        xq = np.linspace(-1, 1, p + 2)
        cp = np.array([(x, y) for y in xp for x in xp])
        cq = np.array([(x, y) for y in xq for x in xq])
        F, G = f.reshape(-1, 2), g.reshape(-1, 2)
        assert np.allclose(F.sum(axis=0), G.sum(axis=0))
        assert _moment(cp, F) == pytest.approx(_moment(cq, G), abs=1e-12)


def test_pinned_dofs_remove_rigid_modes(mat):
    for p in range(1, 6):
        K = element_kernel(p, gauss_rule(p + 1), 1.0, mat).stiffness(np.ones((p + 1) ** 2))
        free = np.setdiff1d(np.arange(K.shape[0]), pinned_dofs(p))
        assert np.linalg.matrix_rank(K[np.ix_(free, free)]) == len(free)


def test_energy_ratio_error_exact_reproduction():
    K = np.diag([2.0, 3.0])
    u = np.array([1.0, -1.0])
    assert energy_ratio_error(K, u, K, u) == 0.0
    assert energy_ratio_error(K, u, K, 2 * u) == pytest.approx(0.75)
    assert energy_ratio_error(K, u, K, 0 * u) == 0.0


def test_local_refined_solve_satisfies_equations(mat):
    K = element_kernel(3, gauss_rule(4), 1.0, mat).stiffness(np.ones(16))
    f = np.random.default_rng(1).normal(size=32)
    pins = pinned_dofs(3)
    u = local_refined_solve(K, f, pins, np.array([0.1, 0.2, 0.3]))
    free = np.setdiff1d(np.arange(32), pins)
    assert np.allclose((K @ u)[free], f[free])
    assert np.allclose(u[pins], [0.1, 0.2, 0.3])


def test_qr_error_values(cantilever_bcs, mat):
    mesh = build_mesh(6, 3, 2.0, 2, 16)
    proj = Projection(mesh, 0.3 * mesh.element_size)
    model = AnalysisModel(mesh, proj.rules, cantilever_bcs, mat)
    rho = uniform_design(mesh, 1.0)
    system = model.solve(proj.field(rho).rho_tilde)
    eps = qr_errors(system, proj.grid(rho), proj.radius)
    assert np.all(eps < 0.9) and np.all(eps > -1e-9)
    assert eps[0] == pytest.approx(qr_error(0, system, proj.grid(rho), proj.radius))


def test_qr_flag_threshold():
    assert qr_flag([0.95, 0.95, 0.9, 0.85], [2, 5, 2, 2]).tolist() == [True, False, False, False]
