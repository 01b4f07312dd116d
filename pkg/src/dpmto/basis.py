"""Lagrange shape functions on the bi-unit square and Gauss quadrature rules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

# (d, p) -> Gauss points per axis, and d -> max polynomial order of the design field
TABLE3_RULES = {
    (1, 1): 2,
    (4, 1): 3,
    (9, 2): 4,
    (16, 3): 6,
    (25, 3): 7,
    (36, 4): 8,
    (49, 5): 10,
    (64, 5): 11,
}
DESIGN_FIELD_ORDER = {1: 0, 4: 2, 9: 3, 16: 5, 25: 6, 36: 7, 49: 9, 64: 10}

MAX_GAUSS_POINTS = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the bi-unit square ``[-1, 1]^2``."""

    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ShapeBasis:
    """Tensor-product Lagrange basis of order ``p`` on equispaced support points.

    Support point ``k = j * (p + 1) + i`` sits at ``(-1 + 2i/p, -1 + 2j/p)``.
    """

    p: int

    @property
    def n_sup(self) -> int:
        return (self.p + 1) ** 2

    @property
    def nodes_1d(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.p + 1)

    @property
    def support_points(self) -> np.ndarray:
        x = self.nodes_1d
        xx, yy = np.meshgrid(x, x)
        return np.column_stack([xx.ravel(), yy.ravel()])


def lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of the 1D Lagrange polynomials at ``x``.

    Returns two arrays of shape ``(len(x), len(nodes))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    diff = x[:, None] - nodes[None, :]  # (nx, n)
    denom = np.array([np.prod([nodes[k] - nodes[m] for m in range(n) if m != k]) for k in range(n)])
    vals = np.empty((len(x), n))
    ders = np.zeros((len(x), n))
    for k in range(n):
        others = [m for m in range(n) if m != k]
        vals[:, k] = np.prod(diff[:, others], axis=1) / denom[k]
        for a in others:
            rest = [m for m in others if m != a]
            ders[:, k] += np.prod(diff[:, rest], axis=1) if rest else 1.0
        ders[:, k] /= denom[k]
    return vals, ders


def tabulate(p: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(npts, n_sup)`` and reference gradients ``(npts, n_sup, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = np.linspace(-1.0, 1.0, p + 1)
    vx, dx = lagrange_1d(nodes, pts[:, 0])
    vy, dy = lagrange_1d(nodes, pts[:, 1])
    # basis index k = j*(p+1) + i -> product of x-factor i and y-factor j
    vals = (vy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
    gx = (vy[:, :, None] * dx[:, None, :]).reshape(len(pts), -1)
    gy = (dy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
    return vals, np.stack([gx, gy], axis=-1)


def eval_basis(basis: ShapeBasis, point) -> tuple[np.ndarray, np.ndarray]:
    vals, grads = tabulate(basis.p, np.asarray(point, dtype=float).reshape(1, 2))
    return vals[0], grads[0]


@lru_cache(maxsize=None)
def gauss_rule(n_per_axis: int) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule with ``n_per_axis**2`` points."""
    if not 1 <= n_per_axis <= MAX_GAUSS_POINTS:
        raise ConfigurationError(f"unsupported Gauss rule size {n_per_axis}")
    x, w = np.polynomial.legendre.leggauss(n_per_axis)
    xx, yy = np.meshgrid(x, x)
    ww = np.outer(w, w)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    pts.flags.writeable = False
    weights = ww.ravel()
    weights.flags.writeable = False
    return QuadratureRule(pts, weights)


def design_field_order(d: int) -> int:
    """Polynomial order of the design field carried by ``d`` design points.

    Off-table counts take the order of the nearest tabulated count not below ``d``.
    """
    for dt in sorted(DESIGN_FIELD_ORDER):
        if dt >= d:
            return DESIGN_FIELD_ORDER[dt]
    # beyond the table: grows with the points per axis, as the last rows do
    return math.isqrt(d - 1) + 3


def select_rule(d: int, p: int) -> int:
    """Gauss points per axis needed to integrate an order-``p`` stiffness with ``d`` design points."""
    if (d, p) in TABLE3_RULES:
        return TABLE3_RULES[(d, p)]
    stiffness_order = 2 * p + design_field_order(d)
    return min(math.ceil((stiffness_order + 1) / 2), MAX_GAUSS_POINTS)


@lru_cache(maxsize=None)
def composite_rule(background_m: int, p: int, extra_degree: int = 0) -> QuadratureRule:
    """Gauss rule repeated over each of the ``m x m`` density cells.

    The per-cell rule is exact for per-axis degree ``2p + extra_degree``; with the
    default this covers piecewise-constant densities times order-``p`` products.
    """
    if background_m < 1:
        raise ConfigurationError("background_m must be >= 1")
    n_cell = math.ceil((2 * p + extra_degree + 1) / 2)
    base = gauss_rule(n_cell)
    m = background_m
    size = 2.0 / m
    pts, wts = [], []
    for b in range(m):
        for a in range(m):
            center = np.array([-1.0 + (a + 0.5) * size, -1.0 + (b + 0.5) * size])
            pts.append(center + 0.5 * size * base.points)
            wts.append(base.weights * (0.5 * size) ** 2)
    points = np.vstack(pts)
    weights = np.concatenate(wts)
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points, weights)


@lru_cache(maxsize=None)
def mass_matrix(p_row: int, p_col: int) -> np.ndarray:
    """Scalar mixed mass matrix ``int N_i^(p_row) N_j^(p_col)`` over the bi-unit square."""
    rule = gauss_rule(max(p_row, p_col) + 1)
    a, _ = tabulate(p_row, rule.points)
    b, _ = tabulate(p_col, rule.points)
    return (a * rule.weights[:, None]).T @ b


def element_rule(p: int, d: int, background_m: int, mode: str = "select") -> QuadratureRule:
    """Integration rule used for an element's stiffness.

    ``mode`` is ``"select"`` (single Gauss rule sized for ``(d, p)``) or
    ``"composite"`` (order ``p + 1`` Gauss rule in every density cell).
    """
    if mode == "select":
        return gauss_rule(select_rule(d, p))
    if mode == "composite":
        return composite_rule(background_m, p)
    raise ConfigurationError(f"unknown integration mode {mode!r}")
