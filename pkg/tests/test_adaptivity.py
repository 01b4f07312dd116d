import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmto.adaptivity import (AdaptivityConfig, apply_analysis_step, apply_density_step, apply_qr_step, assign_d,
                              smooth_p, update_background)
from dpmto.analysis import DofMap
from dpmto.errors import ConfigurationError
from dpmto.mesh import build_mesh, max_design_points


def _line(ps, ds=None):
    mesh = build_mesh(len(ps), 1, float(len(ps)), 1, 1)
    for el, p in zip(mesh.elements, ps):
        el.p = p
    for k, d in enumerate(ds or []):
        mesh.set_d(k, d)
    return mesh


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AdaptivityConfig(refine_analysis=1.5)
    with pytest.raises(ConfigurationError):
        AdaptivityConfig(p_max=0)
    with pytest.raises(ConfigurationError):
        AdaptivityConfig(n_cycles=0)


def test_analysis_step_floor_and_cap():
    mesh = _line([1, 3, 5])
    cfg = AdaptivityConfig(refine_analysis=1 / 3, coarsen_analysis=1 / 3)
    theta = apply_analysis_step(mesh, [0.0, 0.5, 1.0], cfg)
    assert theta.tolist() == [-1, 0, 1]
    assert mesh.p.tolist() == [1, 3, 5]


def test_analysis_step_fractions_on_800_elements():
    mesh = build_mesh(40, 20, 2.0, 2, 16)
    theta = apply_analysis_step(mesh, np.random.default_rng(0).uniform(size=800), AdaptivityConfig())
    assert (theta == 1).sum() == 80 and (theta == -1).sum() == 40
    assert (mesh.p == 3).sum() == 80 and (mesh.p == 1).sum() == 40


def test_density_step_examples():
    mesh = _line([2, 2, 1, 3])
    mesh.elements[1].theta = -1
    mesh.elements[3].theta = 1
    apply_density_step(mesh, [-0.2, 0.1, -0.1, 0.3], AdaptivityConfig())
    assert mesh.p.tolist() == [1, 3, 1, 3]
    assert [e.theta for e in mesh.elements] == [0, -1, -2, 1]


def test_density_step_dead_zone_untouched():
    mesh = _line([2, 2])
    apply_density_step(mesh, [0.0, 0.0], AdaptivityConfig())
    assert mesh.p.tolist() == [2, 2]


@pytest.mark.parametrize("ps,want", [([1, 5], [3, 5]), ([2, 3], [2, 3]), ([1, 1, 5], [1, 3, 5]),
                                     ([5, 1, 1, 1], [5, 3, 1, 1])])
def test_smoothing_examples(ps, want):
    mesh = _line(ps)
    smooth_p(mesh)
    assert mesh.p.tolist() == want


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=6, max_size=6))
def test_smoothing_only_raises_and_bounds_jumps(ps):
    mesh = build_mesh(3, 2, 3.0, 1, 1)
    for el, p in zip(mesh.elements, ps):
        el.p = p
    smooth_p(mesh)
    assert np.all(mesh.p >= np.array(ps))
    for i in range(6):
        for j in mesh.neighbors(i):
            assert abs(mesh.p[i] - mesh.p[j]) <= 2


def test_assign_d_examples():
    mesh = _line([1, 3, 5])
    mesh.elements[0].theta = -2
    assign_d(mesh)
    assert mesh.d.tolist() == [1, 29, 64]
    assert len(mesh.elements[1].design_points) == 29
    assert update_background(mesh) == 8


def test_assign_d_leaves_untouched_elements():
    mesh = build_mesh(2, 1, 2.0, 2, 16)
    mesh.elements[1].p = 3
    assign_d(mesh, np.array([False, True]))
    assert mesh.d.tolist() == [16, 29]


@pytest.mark.parametrize("ds,m", [([16, 16], 4), ([16, 29], 6), ([64, 1], 8), ([1, 1], 1)])
def test_background_perfect_square(ds, m):
    mesh = _line([2, 2], ds)
    assert update_background(mesh) == m


def test_qr_step_single_increment_and_smoothing():
    mesh = _line([1, 3, 5])
    flags = apply_qr_step(mesh, [0.0, 0.95, 0.95], AdaptivityConfig())
    assert flags.tolist() == [False, True, False]
    assert mesh.p.tolist() == [2, 4, 5]
    mesh2 = _line([2, 2])
    apply_qr_step(mesh2, [0.5, 0.1], AdaptivityConfig())
    assert mesh2.p.tolist() == [2, 2]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_cycle_steps_preserve_invariants(seed):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(5, 3, 5.0, 2, 16)
    cfg = AdaptivityConfig()
    p0 = mesh.p.copy()
    for el in mesh.elements:
        el.theta = 0
    apply_analysis_step(mesh, rng.uniform(size=15), AdaptivityConfig(refine_analysis=0.2, coarsen_analysis=0.2))
    apply_density_step(mesh, rng.uniform(-1, 1, 15), cfg)
    smooth_p(mesh)
    theta = np.array([e.theta for e in mesh.elements])
    assign_d(mesh, (mesh.p != p0) | (theta != 0))
    m = update_background(mesh)
    apply_qr_step(mesh, rng.uniform(0.5, 1.0, 15), cfg)
    assert np.all(mesh.p - p0 >= -1)
    assert m * m >= mesh.d.max()
    for el in mesh.elements:
        assert el.d == 1 if el.theta == -2 else el.d <= max(16, max_design_points(el.p))
        for j in mesh.neighbors(el.index):
            assert abs(el.p - mesh.elements[j].p) <= 2
    DofMap(mesh)  # the adapted mesh is analysable
