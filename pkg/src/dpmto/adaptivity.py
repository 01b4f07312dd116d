"""One dp-adaptive cycle: analysis, density and QR driven updates of p and d."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import AnalysisSystem
from .design import BackgroundGrid, Projection, transfer_design
from .errors import ConfigurationError
from .indicators import (
    IndicatorReport,
    density_bounds,
    density_indicator,
    kelly,
    qr_errors,
    qr_flag,
    rank_and_flag_analysis,
)
from .mesh import MtoMesh, max_design_points, smallest_square_root


@dataclass
class AdaptivityConfig:
    refine_analysis: float = 0.10
    coarsen_analysis: float = 0.05
    refine_density: float = 1.0
    coarsen_density: float = 1.0
    alpha_qr: float = 0.9
    p_max: int = 5
    d_max: int = 64
    n_cycles: int = 4
    alpha_bounds: float = 0.2
    beta_bounds: float = 0.8

    def __post_init__(self):
        for name in ("refine_analysis", "coarsen_analysis", "refine_density", "coarsen_density"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name}={v} outside [0, 1]")
        if self.p_max < 1 or self.d_max < 1:
            raise ConfigurationError("p_max and d_max must be >= 1")
        if self.n_cycles < 1:
            raise ConfigurationError("n_cycles must be >= 1")


def apply_analysis_step(mesh: MtoMesh, gamma_a, config: AdaptivityConfig) -> np.ndarray:
    theta = rank_and_flag_analysis(gamma_a, config.refine_analysis, config.coarsen_analysis)
    for el, t in zip(mesh.elements, theta):
        el.theta = int(t)
        if t < 0:
            el.p = max(el.p - 1, 1)
        elif t > 0:
            el.p = min(el.p + 1, config.p_max)
    return theta


def _density_sets(gamma_d: np.ndarray, config: AdaptivityConfig) -> tuple[np.ndarray, np.ndarray]:
    n = len(gamma_d)
    order = np.lexsort((np.arange(n), gamma_d))
    nc = int(np.floor(config.coarsen_density * n + 1e-9))
    nr = int(np.floor(config.refine_density * n + 1e-9))
    coarsen = np.zeros(n, dtype=bool)
    refine = np.zeros(n, dtype=bool)
    coarsen[order[:nc]] = True
    if nr:
        refine[order[n - nr :]] = True
    return coarsen & (gamma_d < 0), refine & (gamma_d > 0)


def apply_density_step(mesh: MtoMesh, gamma_d, config: AdaptivityConfig) -> None:
    coarsen, refine = _density_sets(np.asarray(gamma_d, dtype=float), config)
    for el in mesh.elements:
        k = el.index
        if coarsen[k]:
            if el.p == 1:
                el.theta = -2
            elif el.theta == 0:
                el.p -= 1
        elif refine[k] and el.theta in (0, -1):
            el.p = min(el.p + 1, config.p_max)


def smooth_p(mesh: MtoMesh) -> int:
    """Raise lower orders until adjacent elements differ by at most 2; returns number of raises."""
    raised = 0
    changed = True
    while changed:
        changed = False
        for el in mesh.elements:
            for j in mesh.neighbors(el.index):
                other = mesh.elements[j].p
                if other - el.p > 2:
                    el.p = other - 2
                    raised += 1
                    changed = True
    return raised


def assign_d(mesh: MtoMesh, touched=None) -> None:
    """Set ``d`` from the element bound (or 1 for Θ=−2) on the elements in ``touched`` (all by default)."""
    idx = range(mesh.n_elements) if touched is None else np.nonzero(touched)[0]
    for k in idx:
        el = mesh.elements[k]
        d = 1 if el.theta == -2 else min(max_design_points(el.p), mesh.d_max)
        if d != el.d:
            mesh.set_d(int(k), d)


def update_background(mesh: MtoMesh) -> int:
    mesh.background_m = smallest_square_root(int(mesh.d.max()))
    return mesh.background_m


def apply_qr_step(mesh: MtoMesh, qr_values, config: AdaptivityConfig) -> np.ndarray:
    flags = qr_flag(qr_values, mesh.p, config.alpha_qr, config.p_max)
    for k in np.nonzero(flags)[0]:
        mesh.elements[k].p += 1
    if flags.any():
        smooth_p(mesh)
    return flags


Reanalyze = Callable[[MtoMesh, np.ndarray], tuple[AnalysisSystem, Projection]]


def run_adaptive_cycle(
    mesh: MtoMesh,
    rho: np.ndarray,
    system: AnalysisSystem,
    projection: Projection,
    cycle: int,
    config: AdaptivityConfig,
    reanalyze: Reanalyze,
) -> tuple[MtoMesh, np.ndarray, IndicatorReport]:
    """Adapt a copy of ``mesh`` after optimization cycle ``cycle``; returns the new mesh and design."""
    grid: BackgroundGrid = projection.grid(rho)
    new = mesh.copy()
    for el in new.elements:
        el.theta = 0
    p_start = new.p

    gamma_a = kelly(system)
    apply_analysis_step(new, gamma_a, config)

    bounds = density_bounds(cycle, config.alpha_bounds, config.beta_bounds)
    gamma_d = density_indicator(grid, bounds)
    apply_density_step(new, gamma_d, config)
    smooth_p(new)
    theta = np.array([e.theta for e in new.elements])
    assign_d(new, (new.p != p_start) | (theta != 0))
    update_background(new)

    same = (
        np.array_equal(new.p, mesh.p)
        and np.array_equal(new.d, mesh.d)
        and new.background_m == mesh.background_m
    )
    if same:
        new_rho = np.array(rho, copy=True)
        sys2, proj2 = system, projection
    else:
        new_rho = transfer_design(mesh, grid, new)
        sys2, proj2 = reanalyze(new, new_rho)
    qr = qr_errors(sys2, proj2.grid(new_rho), proj2.radius, proj2.mode)
    flags = apply_qr_step(new, qr, config)
    report = IndicatorReport(cycle, gamma_a, gamma_d, qr, theta, bounds, {"qr_flags": flags})
    return new, new_rho, report
