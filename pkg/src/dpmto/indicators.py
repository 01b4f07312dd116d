"""Refinement indicators: Kelly edge-jump error, density-based indicator and the QR-error."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .analysis import AnalysisSystem, element_kernel, simp_modulus
from .basis import element_rule, mass_matrix, tabulate
from .design import BackgroundGrid, filter_weights, physical_points
from .errors import NumericalFailure

ALPHA_BOUNDS = 0.2
BETA_BOUNDS = 0.8
RHO_MIN = 0.0
RHO_MAX = 1.0
ALPHA_QR = 0.9


@dataclass
class IndicatorReport:
    cycle: int
    gamma_a: np.ndarray
    gamma_d: np.ndarray
    qr_error: np.ndarray
    theta: np.ndarray
    bounds: tuple[float, float, float, float]
    extra: dict = field(default_factory=dict)

    def rows(self):
        """``(cycle, element, gamma_a, gamma_d, qr_error, theta)`` per element."""
        return [
            (self.cycle, i, float(a), float(d), float(q), int(t))
            for i, (a, d, q, t) in enumerate(zip(self.gamma_a, self.gamma_d, self.qr_error, self.theta))
        ]


# --------------------------------------------------------------------------- Kelly


@lru_cache(maxsize=None)
def _edge_normal_grads(p: int, side: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference normal derivatives of the order-``p`` basis on one side, plus 1D weights."""
    t, w = np.polynomial.legendre.leggauss(n)
    if side == "right":
        pts, axis = np.column_stack([np.ones(n), t]), 0
    elif side == "left":
        pts, axis = np.column_stack([-np.ones(n), t]), 0
    elif side == "top":
        pts, axis = np.column_stack([t, np.ones(n)]), 1
    else:
        pts, axis = np.column_stack([t, -np.ones(n)]), 1
    _, grads = tabulate(p, pts)
    return grads[:, :, axis], w


def kelly(system: AnalysisSystem, u: np.ndarray | None = None) -> np.ndarray:
    """Per-element sum over interior faces of ``c_F * int |[du/dn]|^2 ds``.

    ``c_F = h_F / (2 p_F)`` with ``h_F`` the element diagonal and ``p_F`` the larger
    adjacent order. Each face contributes fully to both of its elements.
    """
    mesh = system.model.mesh
    dm = system.dofmap
    u = system.u if u is None else u
    h = mesh.element_size
    h_F = math.sqrt(2.0) * h
    p = mesh.p
    local = [dm.gather(i, u).reshape(-1, 2) for i in range(mesh.n_elements)]
    gamma = np.zeros(mesh.n_elements)
    pairs = []
    for iy in range(mesh.ny):
        for ix in range(mesh.nx):
            e = mesh.element_index(ix, iy)
            if ix + 1 < mesh.nx:
                pairs.append((e, e + 1, "right", "left"))
            if iy + 1 < mesh.ny:
                pairs.append((e, e + mesh.nx, "top", "bottom"))
    for a, b, side_a, side_b in pairs:
        pa, pb = int(p[a]), int(p[b])
        pf = max(pa, pb)
        n = pf + 1
        ga, w = _edge_normal_grads(pa, side_a, n)
        gb, _ = _edge_normal_grads(pb, side_b, n)
        jump = (ga @ local[a] - gb @ local[b]) * (2.0 / h)  # (n, 2)
        integral = 0.5 * h * float(w @ np.sum(jump * jump, axis=1))
        c = h_F / (2.0 * pf) * integral
        gamma[a] += c
        gamma[b] += c
    return gamma


def _floor_count(frac: float, n: int) -> int:
    return int(math.floor(frac * n + 1e-9))


def rank_and_flag_analysis(gamma_a, refine_frac: float = 0.10, coarsen_frac: float = 0.05) -> np.ndarray:
    """Θ per element: −1 for the lowest ``coarsen_frac``, +1 for the highest ``refine_frac``."""
    g = np.asarray(gamma_a, dtype=float)
    n = len(g)
    order = np.lexsort((np.arange(n), g))
    theta = np.zeros(n, dtype=int)
    nc, nr = _floor_count(coarsen_frac, n), _floor_count(refine_frac, n)
    theta[order[:nc]] = -1
    if nr:
        theta[order[n - nr :]] = 1
    return theta


# --------------------------------------------------------------------------- density


def density_bounds(cycle: int, alpha: float = ALPHA_BOUNDS, beta: float = BETA_BOUNDS,
                   rho_min: float = RHO_MIN, rho_max: float = RHO_MAX) -> tuple[float, float, float, float]:
    """``(r_l, r_u, c_l, c_u)`` for adaptive cycle ``cycle``."""
    if cycle < 1:
        raise ValueError("cycle index starts at 1")
    avg = 0.5 * (rho_max + rho_min)
    decay = math.exp(-beta * (cycle - 1))
    r_l = rho_min + (1.0 - alpha) * avg * decay
    r_u = rho_max - (1.0 - alpha) * avg * decay
    c_l = rho_min + alpha * avg * decay
    c_u = rho_max - alpha * avg * decay
    return r_l, r_u, c_l, c_u


def cell_contributions(rho, bounds, rho_avg: float = 0.5) -> np.ndarray:
    r_l, r_u, c_l, c_u = bounds
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    out += np.where((rho >= r_l) & (rho <= rho_avg), rho - r_l, 0.0)
    out += np.where((rho > rho_avg) & (rho <= r_u), r_u - rho, 0.0)
    out -= np.where(rho <= c_l, c_l - rho, 0.0)
    out -= np.where(rho >= c_u, rho - c_u, 0.0)
    return out


def density_indicator(grid: BackgroundGrid, bounds) -> np.ndarray:
    """Γᵈ per element: mean cell contribution over the element's density cells."""
    m = grid.m
    cells = grid.values.reshape(grid.ny, m, grid.nx, m).transpose(0, 2, 1, 3).reshape(grid.nx * grid.ny, m * m)
    return cell_contributions(cells, bounds).mean(axis=1)


# --------------------------------------------------------------------------- QR-error


def prolong_load(f_local: np.ndarray, p: int) -> np.ndarray:
    """Order-(p+1) nodal loads of the order-p load field represented by ``f_local``."""
    f = np.asarray(f_local, dtype=float).reshape(-1, 2)
    beta = np.linalg.solve(mass_matrix(p, p), f)
    return (mass_matrix(p + 1, p) @ beta).ravel()


def pinned_dofs(p: int) -> np.ndarray:
    """Element DOFs fixed in the local solve: both components at corner (0,0), y at corner (p,0)."""
    return np.array([0, 1, 2 * p + 1])


def energy_ratio_error(K_p, u_p, K_q, u_q) -> float:
    """``1 - J_p / J_q`` with ``J = u^T K u / 2``."""
    Jp = 0.5 * float(u_p @ K_p @ u_p)
    Jq = 0.5 * float(u_q @ K_q @ u_q)
    if Jq == 0.0:
        return 0.0
    return 1.0 - Jp / Jq


def local_refined_solve(K_q: np.ndarray, f_q: np.ndarray, pinned: np.ndarray, values: np.ndarray) -> np.ndarray:
    n = K_q.shape[0]
    free = np.setdiff1d(np.arange(n), pinned)
    u = np.zeros(n)
    u[pinned] = values
    rhs = f_q[free] - K_q[np.ix_(free, pinned)] @ values
    A = K_q[np.ix_(free, free)]
    try:
        u[free] = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"pinned local system is singular: {exc}", iterations=0) from exc
    if not np.all(np.isfinite(u)):
        raise NumericalFailure("pinned local system produced non-finite values", iterations=0)
    return u


def qr_error(index: int, system: AnalysisSystem, grid: BackgroundGrid, radius: float,
             mode: str = "select") -> float:
    """Strain-energy deficit of the order-p solution against a local order-(p+1) re-solve."""
    model = system.model
    mesh = model.mesh
    el = mesh.elements[index]
    p = int(el.p)
    h = mesh.element_size
    mat = system.mat
    K_p = system.element_K(index)
    u_p = system.element_u(index)
    f_q = prolong_load(K_p @ u_p, p)
    rule = element_rule(p + 1, el.d, mesh.background_m, mode)
    pts = physical_points(mesh, index, rule.points)
    rho = filter_weights(pts, mesh.nx, mesh.ny, grid.m, h, radius) @ grid.values
    K_q = element_kernel(p + 1, rule, h, mat).stiffness(simp_modulus(rho, mat))
    src = pinned_dofs(p)
    u_q = local_refined_solve(K_q, f_q, pinned_dofs(p + 1), u_p[src])
    return energy_ratio_error(K_p, u_p, K_q, u_q)


def qr_errors(system: AnalysisSystem, grid: BackgroundGrid, radius: float, mode: str = "select") -> np.ndarray:
    n = system.model.mesh.n_elements
    return np.array([qr_error(i, system, grid, radius, mode) for i in range(n)])


def qr_flag(values, p, threshold: float = ALPHA_QR, p_max: int = 5) -> np.ndarray:
    """Boolean mask of elements to raise by one order."""
    return (np.asarray(values, dtype=float) > threshold) & (np.asarray(p) < p_max)
