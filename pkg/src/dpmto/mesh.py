"""Structured grid of MTO elements carrying per-element order ``p`` and design-point count ``d``."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .kmeans import kmeans_place

DIM = 2
RIGID_BODY_MODES = 3
P_MAX = 5
D_MAX = 64


def projection_radius(d: int, element_size: float, dim: int = DIM) -> float:
    """Radius of the element-local design-point to density-cell projection."""
    root = round(d ** (1.0 / dim))
    if root**dim < d:
        root += 1
    while root > 1 and (root - 1) ** dim >= d:
        root -= 1
    return 1.04 * math.sqrt(dim) * element_size / root


def max_design_points(p: int) -> int:
    """Deformation modes of an order-``p`` quadrilateral: element DOFs minus rigid-body modes."""
    return DIM * (p + 1) ** 2 - RIGID_BODY_MODES


def smallest_square_root(n: int) -> int:
    """Smallest ``m`` with ``m * m >= n``."""
    m = math.isqrt(max(n, 1))
    return m if m * m >= n else m + 1


@dataclass
class MtoElement:
    index: int
    p: int
    d: int
    design_points: np.ndarray  # (d, 2) in the unit reference square
    r_p: float
    theta: int = 0


@dataclass
class MtoMesh:
    nx: int
    ny: int
    element_size: float
    elements: list[MtoElement]
    background_m: int
    p_max: int = P_MAX
    d_max: int = D_MAX
    seed: int = 0
    _neighbors: list[list[int]] = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def p(self) -> np.ndarray:
        return np.array([e.p for e in self.elements])

    @property
    def d(self) -> np.ndarray:
        return np.array([e.d for e in self.elements])

    @property
    def n_design(self) -> int:
        return int(sum(e.d for e in self.elements))

    @property
    def width(self) -> float:
        return self.nx * self.element_size

    @property
    def height(self) -> float:
        return self.ny * self.element_size

    def grid_coords(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_elements:
            raise IndexError(f"element index {index} out of range")
        return index % self.nx, index // self.nx

    def element_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def origin(self, index: int) -> np.ndarray:
        ix, iy = self.grid_coords(index)
        return np.array([ix * self.element_size, iy * self.element_size])

    def neighbors(self, index: int) -> list[int]:
        if self._neighbors is None:
            self._neighbors = [self._compute_neighbors(i) for i in range(self.n_elements)]
        if not 0 <= index < self.n_elements:
            raise IndexError(f"element index {index} out of range")
        return list(self._neighbors[index])

    def _compute_neighbors(self, index: int) -> list[int]:
        ix, iy = self.grid_coords(index)
        out = []
        for dx, dy in ((0, -1), (-1, 0), (1, 0), (0, 1)):
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < self.nx and 0 <= jy < self.ny:
                out.append(self.element_index(jx, jy))
        return out

    def design_offsets(self) -> np.ndarray:
        """Start of each element's block in the design vector (length ``n_elements + 1``)."""
        return np.concatenate([[0], np.cumsum(self.d)])

    def set_d(self, index: int, d: int) -> None:
        """Change an element's design-point count, re-placing points and radius."""
        el = self.elements[index]
        el.d = int(d)
        el.design_points = kmeans_place(el.d, self.seed)
        el.r_p = projection_radius(el.d, self.element_size)

    def copy(self) -> "MtoMesh":
        new = copy.copy(self)
        new.elements = [copy.copy(e) for e in self.elements]
        new._neighbors = self._neighbors
        return new

    def snapshot_rows(self, cycle: int) -> list[tuple[int, int, int, int, int]]:
        """Records ``(cycle, element, p, d, background_m)`` for export."""
        return [(cycle, e.index, e.p, e.d, self.background_m) for e in self.elements]


def build_mesh(
    nx: int,
    ny: int,
    domain_width: float,
    p0: int,
    d0: int,
    *,
    p_max: int = P_MAX,
    d_max: int = D_MAX,
    seed: int = 0,
) -> MtoMesh:
    """Uniform mesh of ``nx x ny`` square MTO elements spanning ``domain_width`` in x."""
    if nx < 1 or ny < 1 or domain_width <= 0:
        raise ConfigurationError("mesh dimensions must be positive")
    if not 1 <= p0 <= p_max:
        raise ConfigurationError(f"p0={p0} outside [1, {p_max}]")
    if not 1 <= d0 <= d_max:
        raise ConfigurationError(f"d0={d0} outside [1, {d_max}]")
    size = domain_width / nx
    pts = kmeans_place(d0, seed)
    r_p = projection_radius(d0, size)
    elements = [MtoElement(i, p0, d0, pts, r_p) for i in range(nx * ny)]
    return MtoMesh(nx, ny, size, elements, smallest_square_root(d0), p_max, d_max, seed)
