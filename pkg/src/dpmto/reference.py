"""Fine-mesh reference evaluation of a density raster (elementwise-constant, uniform order).

Element-interior nodes are condensed out statically. With a constant modulus per element the
condensed element matrix is ``E_e * S0`` for a single unit Schur complement ``S0``, so the
reduced system is exact and needs roughly half the memory of the full one.
"""
from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
import scipy.sparse as sp

from .analysis import BoundaryConditions, MaterialModel, boundary_data, element_kernel, simp_modulus
from .basis import gauss_rule, lagrange_1d
from .errors import ConfigurationError
from .solver import Factor

log = logging.getLogger(__name__)


class UniformGrid:
    """Nodes of a uniform order-``p`` quadrilateral grid lying on element edges."""

    def __init__(self, nx: int, ny: int, p: int, h: float):
        self.nx, self.ny, self.p, self.h = nx, ny, p, h
        NX, NY = p * nx + 1, p * ny + 1
        I, J = np.meshgrid(np.arange(NX), np.arange(NY))
        keep = (I % p == 0) | (J % p == 0)
        self.index = np.full((NY, NX), -1, dtype=np.int64)
        self.index[keep] = np.arange(int(keep.sum()))
        self.coords = np.column_stack([I[keep], J[keep]]) * (h / p)
        self.n_nodes = int(keep.sum())

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def nearest_node(self, xy, exclude=None) -> int:
        d = np.linalg.norm(self.coords - np.asarray(xy)[None, :], axis=1)
        if exclude is not None and len(exclude):
            d[exclude] = np.inf
        return int(np.argmin(d))

    def boundary_local_nodes(self) -> np.ndarray:
        p = self.p
        return np.array([j * (p + 1) + i for j in range(p + 1) for i in range(p + 1)
                         if i in (0, p) or j in (0, p)])

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 2 * n_boundary) global DOFs in local boundary-node order, element ``iy*nx+ix``."""
        p = self.p
        loc = self.boundary_local_nodes()
        li, lj = loc % (p + 1), loc // (p + 1)
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        gi = ix.ravel()[:, None] * p + li[None, :]
        gj = iy.ravel()[:, None] * p + lj[None, :]
        nodes = self.index[gj, gi]
        dofs = np.empty((nodes.shape[0], 2 * nodes.shape[1]), dtype=np.int32)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        return dofs

    def traction_loads(self, side: str, tx: float, ty: float) -> np.ndarray:
        p, h = self.p, self.h
        x, w = np.polynomial.legendre.leggauss(p + 1)
        vals, _ = lagrange_1d(np.linspace(0.0, 1.0, p + 1), 0.5 * (x + 1.0))
        nodal = 0.5 * h * (w @ vals)
        NY, NX = self.index.shape
        if side in ("top", "bottom"):
            line = self.index[NY - 1 if side == "top" else 0, :]
            n_el = self.nx
        elif side in ("left", "right"):
            line = self.index[:, NX - 1 if side == "right" else 0]
            n_el = self.ny
        else:
            raise ConfigurationError(f"unknown side {side!r}")
        f = np.zeros(self.n_dofs)
        for e in range(n_el):
            nodes = line[e * p : e * p + p + 1]
            np.add.at(f, 2 * nodes, tx * nodal)
            np.add.at(f, 2 * nodes + 1, ty * nodal)
        return f


def condensed_unit_stiffness(p: int, h: float, mat: MaterialModel) -> np.ndarray:
    """Schur complement of a unit-modulus order-``p`` element onto its edge nodes."""
    K = element_kernel(p, gauss_rule(p + 1), h, mat).stiffness(np.ones(len(gauss_rule(p + 1))))
    n = p + 1
    is_b = np.array([(k % n) in (0, p) or (k // n) in (0, p) for k in range(n * n)])
    bd = np.column_stack([2 * np.nonzero(is_b)[0], 2 * np.nonzero(is_b)[0] + 1]).ravel()
    idx = np.column_stack([2 * np.nonzero(~is_b)[0], 2 * np.nonzero(~is_b)[0] + 1]).ravel()
    if len(idx) == 0:
        return K[np.ix_(bd, bd)]
    Kbb = K[np.ix_(bd, bd)]
    Kbi = K[np.ix_(bd, idx)]
    Kii = K[np.ix_(idx, idx)]
    return Kbb - Kbi @ np.linalg.solve(Kii, Kbi.T)


def reference_objective(density: np.ndarray, width: float, bcs: BoundaryConditions,
                        mat: MaterialModel, p: int = 3) -> float:
    """Objective ``z^T u`` on a fine mesh with one element per entry of ``density`` (rows along y)."""
    density = np.asarray(density, dtype=float)
    ny, nx = density.shape
    h = width / nx
    grid = UniformGrid(nx, ny, p, h)
    S0 = condensed_unit_stiffness(p, h, mat)
    dofs = grid.element_dofs()
    E = simp_modulus(np.clip(density.ravel(), 0.0, 1.0), mat)
    nb = dofs.shape[1]
    rows = np.repeat(dofs, nb, axis=1).ravel()
    cols = np.tile(dofs, (1, nb)).ravel()
    vals = (E[:, None] * S0.ravel()[None, :]).ravel()
    del dofs, E
    n = grid.n_dofs
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    del rows, cols, vals

    bd = boundary_data(grid, replace(bcs, tractions=[]))
    f = bd.f
    for tr in bcs.tractions:
        f = f + grid.traction_loads(tr.side, tr.tx, tr.ty)
    z = f if bcs.output is None else bd.z
    free = bd.free
    Kff = K[free][:, free]
    del K
    if bd.spring_diag.any():
        Kff = Kff + sp.diags(bd.spring_diag[free])
    log.info("reference solve: %d condensed free DOFs", len(free))
    factor = Factor(Kff)
    u = np.zeros(n)
    u[free] = factor.solve(f[free])
    return float(z @ u)


def upsample(raster: np.ndarray, k: int) -> np.ndarray:
    """Repeat each raster cell into a ``k x k`` block."""
    if k < 1:
        raise ConfigurationError("subdivision factor must be >= 1")
    return np.kron(np.asarray(raster, dtype=float), np.ones((k, k)))
