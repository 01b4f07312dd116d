import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmto.design import (Projection, filter_weights, project_p1, project_p2, transfer_design, uniform_design,
                          volume_fraction)
from dpmto.errors import ConfigurationError
from dpmto.mesh import build_mesh


def _mixed_mesh():
    mesh = build_mesh(3, 2, 3.0, 2, 16)
    for el, p, d in zip(mesh.elements, [1, 2, 3, 2, 1, 2], [4, 9, 16, 16, 1, 9]):
        el.p = p
        if el.d != d:
            mesh.set_d(el.index, d)
    return mesh


def test_p1_rows_sum_to_one_and_stay_in_element():
    mesh = _mixed_mesh()
    proj = Projection(mesh, 0.5)
    P1 = proj.P1.toarray()
    assert np.allclose(P1.sum(axis=1), 1.0, atol=1e-14)
    offsets = mesh.design_offsets()
    m = mesh.background_m
    cols = mesh.nx * m
    for row in range(P1.shape[0]):
        I, J = row % cols, row // cols
        owner = (J // m) * mesh.nx + I // m
        nz = np.nonzero(P1[row])[0]
        assert np.all((nz >= offsets[owner]) & (nz < offsets[owner + 1]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_projection_is_bounded_and_volume_linear(vals):
    mesh = _mixed_mesh()
    proj = Projection(mesh, 0.5)
    rho = np.repeat(vals, mesh.d)
    field = proj.field(rho).rho_tilde
    assert field.min() >= -1e-14 and field.max() <= 1 + 1e-14
    assert proj.volume(rho) == pytest.approx(volume_fraction(proj.grid(rho)), abs=1e-14)


def test_volume_gradient_matches_difference():
    mesh = _mixed_mesh()
    proj = Projection(mesh, 0.5)
    rho = np.random.default_rng(0).uniform(size=mesh.n_design)
    k = 7
    bumped = rho.copy()
    bumped[k] += 0.1
    assert proj.volume(bumped) - proj.volume(rho) == pytest.approx(0.1 * proj.volume_gradient[k], rel=1e-12)


def test_helpers_agree_with_projection():
    mesh = _mixed_mesh()
    proj = Projection(mesh, 0.5)
    rho = np.random.default_rng(1).uniform(size=mesh.n_design)
    grid = project_p1(mesh, rho)
    assert np.allclose(grid.values, proj.grid(rho).values)
    assert np.allclose(project_p2(mesh, grid, 0.5).rho_tilde, proj.field(rho).rho_tilde)
    with pytest.raises(ValueError):
        project_p1(mesh, rho[:-1])
    with pytest.raises(ConfigurationError):
        project_p2(mesh, grid, 0.0)


def test_filter_rejects_isolated_points():
    with pytest.raises(ConfigurationError):
        filter_weights(np.array([[1.0, 1.0]]), 2, 2, 1, 1.0, 1e-3)


def test_grid_raster_layout():
    mesh = build_mesh(2, 1, 2.0, 1, 4)
    proj = Projection(mesh, 0.4)
    rho = np.concatenate([np.zeros(4), np.ones(4)])
    raster = proj.grid(rho).as_array()
    assert raster.shape == (2, 4)
    assert np.allclose(raster[:, :2], 0) and np.allclose(raster[:, 2:], 1)
    grid = proj.grid(rho)
    assert grid.cell_index(np.array([[1.9, 0.9]]))[0] == 7


def test_transfer_design_preserves_piecewise_constant():
    mesh = build_mesh(2, 1, 2.0, 2, 16)
    proj = Projection(mesh, 0.4)
    rho = np.concatenate([np.full(16, 0.2), np.full(16, 0.8)])
    new = mesh.copy()
    new.set_d(0, 1)
    new.set_d(1, 29)
    out = transfer_design(mesh, proj.grid(rho), new)
    assert np.allclose(out[:1], 0.2) and np.allclose(out[1:], 0.8)
    assert len(uniform_design(new, 0.3)) == 30
