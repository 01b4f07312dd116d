"""Design field: projections between design points, the background grid and integration points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import QuadratureRule, element_rule
from .errors import ConfigurationError, ProjectionError
from .kmeans import kmeans_place
from .mesh import MtoMesh, projection_radius

__all__ = [
    "BackgroundGrid",
    "ProjectedDensityField",
    "Projection",
    "kmeans_place",
    "projection_radius",
    "p1_matrix",
    "p2_matrix",
    "project_p1",
    "project_p2",
    "transfer_design",
    "volume_fraction",
]


@dataclass
class BackgroundGrid:
    """Piecewise-constant densities on the global ``(nx*m) x (ny*m)`` cell grid.

    ``values`` is flat with cell ``(I, J)`` (``I`` along x) at ``J * nx * m + I``.
    """

    nx: int
    ny: int
    m: int
    element_size: float
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape ``(rows, cols)`` with row 0 at y = 0."""
        return self.ny * self.m, self.nx * self.m

    @property
    def cell_size(self) -> float:
        return self.element_size / self.m

    @property
    def cell_area(self) -> float:
        return self.cell_size**2

    @property
    def centers(self) -> np.ndarray:
        return cell_centers(self.nx, self.ny, self.m, self.element_size)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def cell_index(self, xy: np.ndarray) -> np.ndarray:
        """Flat index of the cell containing each physical point."""
        xy = np.atleast_2d(xy)
        rows, cols = self.shape
        ci = np.clip(np.floor(xy[:, 0] / self.cell_size).astype(int), 0, cols - 1)
        cj = np.clip(np.floor(xy[:, 1] / self.cell_size).astype(int), 0, rows - 1)
        return cj * cols + ci


def cell_centers(nx: int, ny: int, m: int, element_size: float) -> np.ndarray:
    cs = element_size / m
    xs = (np.arange(nx * m) + 0.5) * cs
    ys = (np.arange(ny * m) + 0.5) * cs
    xx, yy = np.meshgrid(xs, ys)
    return np.column_stack([xx.ravel(), yy.ravel()])


def element_cells(mesh: MtoMesh, index: int) -> np.ndarray:
    """Flat background-cell indices of one element, local order ``b * m + a``."""
    m = mesh.background_m
    ix, iy = mesh.grid_coords(index)
    a = np.arange(m)
    cols = ix * m + a
    rows = iy * m + a
    return (rows[:, None] * (mesh.nx * m) + cols[None, :]).ravel()


def _local_p1_weights(d: int, m: int, points: np.ndarray) -> np.ndarray:
    """Row-normalised weights (m*m, d) in unit-element coordinates."""
    a = (np.arange(m) + 0.5) / m
    cx, cy = np.meshgrid(a, a)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    r = projection_radius(d, 1.0)
    dist = np.linalg.norm(centers[:, None, :] - points[None, :, :], axis=2)
    h = np.maximum(r - dist, 0.0)
    sums = h.sum(axis=1)
    if np.any(sums <= 0.0):
        bad = int(np.argmin(sums))
        raise ProjectionError(f"density cell {bad} has no design point within r_p (d={d}, m={m})")
    return h / sums[:, None]


def p1_matrix(mesh: MtoMesh) -> sp.csr_matrix:
    """Element-local projection from design points to background cells, ``(n_cells, n_design)``."""
    m = mesh.background_m
    offsets = mesh.design_offsets()
    cache: dict[tuple[int, int], np.ndarray] = {}
    rows, cols, vals = [], [], []
    for el in mesh.elements:
        key = (el.d, id(el.design_points))
        if key not in cache:
            cache[key] = _local_p1_weights(el.d, m, np.asarray(el.design_points))
        w = cache[key]
        cells = element_cells(mesh, el.index)
        rr, cc = np.nonzero(w)
        rows.append(cells[rr])
        cols.append(offsets[el.index] + cc)
        vals.append(w[rr, cc])
    n_cells = mesh.n_elements * m * m
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cells, mesh.n_design),
    )


def element_rules(mesh: MtoMesh, mode: str = "select") -> list[QuadratureRule]:
    return [element_rule(e.p, e.d, mesh.background_m, mode) for e in mesh.elements]


def physical_points(mesh: MtoMesh, index: int, ref_points: np.ndarray) -> np.ndarray:
    """Map bi-unit reference points of an element to physical coordinates."""
    return mesh.origin(index) + 0.5 * mesh.element_size * (np.asarray(ref_points) + 1.0)


def filter_weights(
    points: np.ndarray, nx: int, ny: int, m: int, element_size: float, radius: float
) -> sp.csr_matrix:
    """Row-normalised linear-hat weights from background cells to arbitrary points."""
    cs = element_size / m
    cols_total, rows_total = nx * m, ny * m
    reach = int(np.ceil(radius / cs)) + 1
    off = np.arange(-reach, reach + 1)
    ox, oy = np.meshgrid(off, off)
    ox, oy = ox.ravel(), oy.ravel()
    pts = np.atleast_2d(points)
    ci = np.floor(pts[:, 0] / cs).astype(int)
    cj = np.floor(pts[:, 1] / cs).astype(int)
    I = ci[:, None] + ox[None, :]
    J = cj[:, None] + oy[None, :]
    valid = (I >= 0) & (I < cols_total) & (J >= 0) & (J < rows_total)
    dx = (I + 0.5) * cs - pts[:, 0:1]
    dy = (J + 0.5) * cs - pts[:, 1:2]
    h = radius - np.sqrt(dx * dx + dy * dy)
    keep = valid & (h > 0.0)
    sums = np.where(keep, h, 0.0).sum(axis=1)
    if np.any(sums <= 0.0):
        bad = int(np.argmin(sums))
        raise ConfigurationError(
            f"no background cell within R={radius:g} of point {pts[bad].tolist()}"
        )
    r, c = np.nonzero(keep)
    vals = h[r, c] / sums[r]
    return sp.csr_matrix(
        (vals, (r, J[r, c] * cols_total + I[r, c])), shape=(len(pts), cols_total * rows_total)
    )


def p2_matrix(mesh: MtoMesh, rules: list[QuadratureRule], radius: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Filter from background cells to all integration points, plus per-element point offsets."""
    pts = [physical_points(mesh, i, r.points) for i, r in enumerate(rules)]
    offsets = np.concatenate([[0], np.cumsum([len(r) for r in rules])])
    P2 = filter_weights(np.vstack(pts), mesh.nx, mesh.ny, mesh.background_m, mesh.element_size, radius)
    return P2, offsets


@dataclass
class ProjectedDensityField:
    """Densities at all integration points with the linear map ``rho_tilde = W @ rho``."""

    rho_tilde: np.ndarray
    W: sp.csr_matrix
    offsets: np.ndarray
    rules: list[QuadratureRule]

    def element_values(self, index: int) -> np.ndarray:
        return self.rho_tilde[self.offsets[index] : self.offsets[index + 1]]


class Projection:
    """Cached P1, P2 and combined operator for one fixed mesh configuration."""

    def __init__(self, mesh: MtoMesh, radius: float, mode: str = "select"):
        self.mesh = mesh
        self.radius = radius
        self.mode = mode
        self.rules = element_rules(mesh, mode)
        self.P1 = p1_matrix(mesh)
        self.P2, self.offsets = p2_matrix(mesh, self.rules, radius)
        self.W = (self.P2 @ self.P1).tocsr()
        n_cells = self.P1.shape[0]
        # volume is the mean cell density, linear in rho
        self.volume_gradient = np.asarray(self.P1.sum(axis=0)).ravel() / n_cells

    def grid(self, rho: np.ndarray) -> BackgroundGrid:
        m = self.mesh
        return BackgroundGrid(m.nx, m.ny, m.background_m, m.element_size, self.P1 @ rho)

    def field(self, rho: np.ndarray) -> ProjectedDensityField:
        return ProjectedDensityField(self.W @ rho, self.W, self.offsets, self.rules)

    def volume(self, rho: np.ndarray) -> float:
        return float(self.volume_gradient @ rho)


def project_p1(mesh: MtoMesh, rho: np.ndarray) -> BackgroundGrid:
    rho = np.asarray(rho, dtype=float)
    if len(rho) != mesh.n_design:
        raise ValueError(f"design vector has {len(rho)} entries, mesh expects {mesh.n_design}")
    return BackgroundGrid(mesh.nx, mesh.ny, mesh.background_m, mesh.element_size, p1_matrix(mesh) @ rho)


def project_p2(
    mesh: MtoMesh, grid: BackgroundGrid, radius: float, mode: str = "select"
) -> ProjectedDensityField:
    if radius <= 0:
        raise ConfigurationError("filter radius must be positive")
    rules = element_rules(mesh, mode)
    P2, offsets = p2_matrix(mesh, rules, radius)
    W = (P2 @ p1_matrix(mesh)).tocsr()
    return ProjectedDensityField(P2 @ grid.values, W, offsets, rules)


def transfer_design(old_mesh: MtoMesh, old_grid: BackgroundGrid, new_mesh: MtoMesh) -> np.ndarray:
    """Sample the old background density under each new design point."""
    pts = [
        physical_points(new_mesh, e.index, 2.0 * np.asarray(e.design_points) - 1.0)
        for e in new_mesh.elements
    ]
    idx = old_grid.cell_index(np.vstack(pts))
    return np.clip(old_grid.values[idx], 0.0, 1.0)


def volume_fraction(grid: BackgroundGrid) -> float:
    return float(np.mean(grid.values))


def uniform_design(mesh: MtoMesh, value: float) -> np.ndarray:
    return np.full(mesh.n_design, float(value))
