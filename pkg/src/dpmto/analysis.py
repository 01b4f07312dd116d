"""Mixed-order plane-stress analysis on the MTO mesh."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .basis import QuadratureRule, gauss_rule, lagrange_1d, tabulate
from .errors import ConfigurationError, StateError
from .mesh import MtoMesh
from .solver import Factor


# --------------------------------------------------------------------------- material


@dataclass(frozen=True)
class MaterialModel:
    E0: float = 1.0
    E_min: float = 1e-9
    nu: float = 0.3
    q: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.E_min < self.E0:
            raise ConfigurationError("need 0 < E_min < E0")
        if self.q < 1.0:
            raise ConfigurationError("SIMP exponent must be >= 1")

    @property
    def D0(self) -> np.ndarray:
        nu = self.nu
        return np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]) / (1.0 - nu**2)

    def with_q(self, q: float) -> "MaterialModel":
        return MaterialModel(self.E0, self.E_min, self.nu, q)

    def scaled(self, factor: float) -> "MaterialModel":
        return MaterialModel(self.E0 * factor, self.E_min * factor, self.nu, self.q)


def simp_modulus(rho_tilde, mat: MaterialModel):
    return mat.E_min + np.power(rho_tilde, mat.q) * (mat.E0 - mat.E_min)


def simp_derivative(rho_tilde, mat: MaterialModel):
    return mat.q * np.power(rho_tilde, mat.q - 1.0) * (mat.E0 - mat.E_min)


# --------------------------------------------------------------------------- element kernels


class ElementKernel:
    """Per-point stiffness contributions ``w |J| B^T D0 B`` of one element type.

    Element DOFs are interleaved ``[ux_0, uy_0, ux_1, ...]`` over the support points.
    """

    def __init__(self, p: int, rule: QuadratureRule, h: float, D0: np.ndarray):
        self.p = p
        self.rule = rule
        self.h = h
        n = (p + 1) ** 2
        self.n_dofs = 2 * n
        _, grads = tabulate(p, rule.points)
        g = grads * (2.0 / h)  # physical gradients
        B = np.zeros((len(rule), 3, 2 * n))
        B[:, 0, 0::2] = g[:, :, 0]
        B[:, 1, 1::2] = g[:, :, 1]
        B[:, 2, 0::2] = g[:, :, 1]
        B[:, 2, 1::2] = g[:, :, 0]
        self.B = B
        self.wdet = rule.weights * (0.25 * h * h)
        self.D0 = D0
        DB = np.einsum("ij,gjk->gik", D0, B)
        self.Kpt = np.einsum("g,gji,gjk->gik", self.wdet, B, DB)
        self._Kflat = self.Kpt.reshape(len(rule), -1)

    def stiffness(self, E: np.ndarray) -> np.ndarray:
        """Element stiffness for moduli ``E`` at the rule points; stacked if ``E`` is 2D."""
        E = np.asarray(E, dtype=float)
        out = E @ self._Kflat
        return out.reshape(E.shape[:-1] + (self.n_dofs, self.n_dofs))

    def strains(self, u_e: np.ndarray) -> np.ndarray:
        """Strains at rule points for element vectors ``u_e`` of shape ``(..., n_dofs)``."""
        return np.einsum("gik,...k->...gi", self.B, u_e)

    def energy_density(self, u_e: np.ndarray, v_e: np.ndarray) -> np.ndarray:
        """``w |J| eps(v)^T D0 eps(u)`` per rule point."""
        eu = self.strains(u_e)
        ev = self.strains(v_e)
        return np.einsum("...gi,ij,...gj->...g", ev, self.D0, eu) * self.wdet


_KERNELS: dict = {}


def element_kernel(p: int, rule: QuadratureRule, h: float, mat: MaterialModel) -> ElementKernel:
    key = (p, len(rule), rule.points.tobytes(), rule.weights.tobytes(), h, mat.nu)
    ker = _KERNELS.get(key)
    if ker is None:
        ker = ElementKernel(p, rule, h, mat.D0)
        _KERNELS[key] = ker
    return ker


def element_stiffness(element, rho_tilde: np.ndarray, rule: QuadratureRule, mat: MaterialModel,
                      h: float = 1.0) -> np.ndarray:
    """``K_e = sum_i B_i^T D_i B_i w_i |J|`` with SIMP moduli from ``rho_tilde`` at the rule points."""
    p = element if isinstance(element, (int, np.integer)) else element.p
    ker = element_kernel(int(p), rule, h, mat)
    return ker.stiffness(simp_modulus(np.asarray(rho_tilde, dtype=float), mat))


# --------------------------------------------------------------------------- DOF numbering


@dataclass(frozen=True)
class Constraint:
    """A local support point of ``element`` slaved to global nodes ``masters`` with ``coefs``."""

    element: int
    local_node: int
    masters: tuple[int, ...]
    coefs: tuple[float, ...]


class DofMap:
    """Global scalar nodes (vertices, edge nodes at the edge's minimum order, element interiors).

    Each element maps to global nodes through ``u_local = C_e u_global[nodes_e]``; ``C_e`` is a
    selection except on edges where the neighbour has a lower order, where the element's edge
    points interpolate the lower-order trace.
    """

    def __init__(self, mesh: MtoMesh):
        self.mesh = mesh
        nx, ny, h = mesh.nx, mesh.ny, mesh.element_size
        p = mesh.p
        self.n_vertices = (nx + 1) * (ny + 1)
        n_h = nx * (ny + 1)

        def el_p(ix, iy):
            if 0 <= ix < nx and 0 <= iy < ny:
                return p[iy * nx + ix]
            return None

        edge_order = []
        for ey in range(ny + 1):
            for ex in range(nx):
                ps = [q for q in (el_p(ex, ey - 1), el_p(ex, ey)) if q is not None]
                edge_order.append(min(ps))
        for ey in range(ny):
            for ex in range(nx + 1):
                ps = [q for q in (el_p(ex - 1, ey), el_p(ex, ey)) if q is not None]
                edge_order.append(min(ps))
        for i in range(mesh.n_elements):
            for j in mesh.neighbors(i):
                if abs(int(p[i]) - int(p[j])) > 2:
                    raise ConfigurationError(
                        f"order jump {p[i]}->{p[j]} between elements {i} and {j} exceeds 2"
                    )
        self.edge_order = np.array(edge_order)
        edge_counts = self.edge_order - 1
        self.edge_start = self.n_vertices + np.concatenate([[0], np.cumsum(edge_counts)])
        first_interior = self.edge_start[-1]
        interior_counts = (p - 1) ** 2
        self.interior_start = first_interior + np.concatenate([[0], np.cumsum(interior_counts)])
        self.n_nodes = int(self.interior_start[-1])

        coords = np.zeros((self.n_nodes, 2))
        vx, vy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        coords[: self.n_vertices] = np.column_stack([vx.ravel(), vy.ravel()]) * h
        self._n_h = n_h
        for e in range(len(self.edge_order)):
            pe = self.edge_order[e]
            v0, v1 = self._edge_vertices(e)
            t = np.arange(1, pe) / pe
            coords[self.edge_start[e] : self.edge_start[e] + pe - 1] = (
                coords[v0][None, :] + t[:, None] * (coords[v1] - coords[v0])[None, :]
            )
        for el in mesh.elements:
            q = el.p
            s = self.interior_start[el.index]
            ii, jj = np.meshgrid(np.arange(1, q), np.arange(1, q))
            coords[s : s + (q - 1) ** 2] = mesh.origin(el.index) + np.column_stack(
                [ii.ravel(), jj.ravel()]
            ) * (h / q)
        self.coords = coords

        self.element_nodes: list[np.ndarray] = []
        self.element_C: list[np.ndarray | None] = []
        self.constraints: list[Constraint] = []
        for el in mesh.elements:
            nodes, C, cons = self._element_map(el.index, int(el.p))
            self.element_nodes.append(nodes)
            self.element_C.append(C)
            self.constraints.extend(cons)

        self.element_dofs = [np.column_stack([2 * n, 2 * n + 1]).ravel() for n in self.element_nodes]
        self.element_T = [None if C is None else np.kron(C, np.eye(2)) for C in self.element_C]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def _edge_vertices(self, e: int) -> tuple[int, int]:
        nx = self.mesh.nx
        if e < self._n_h:
            ey, ex = divmod(e, nx)
            v0 = ey * (nx + 1) + ex
            return v0, v0 + 1
        ey, ex = divmod(e - self._n_h, nx + 1)
        v0 = ey * (nx + 1) + ex
        return v0, v0 + nx + 1

    def _edge_id(self, side: str, ix: int, iy: int) -> int:
        nx = self.mesh.nx
        if side == "bottom":
            return iy * nx + ix
        if side == "top":
            return (iy + 1) * nx + ix
        if side == "left":
            return self._n_h + iy * (nx + 1) + ix
        return self._n_h + iy * (nx + 1) + ix + 1

    def edge_trace_nodes(self, e: int) -> np.ndarray:
        """Global nodes along edge ``e`` ordered from its first to its second vertex."""
        v0, v1 = self._edge_vertices(e)
        pe = self.edge_order[e]
        s = self.edge_start[e]
        return np.array([v0, *range(s, s + pe - 1), v1])

    def _element_map(self, index: int, p: int):
        nx = self.mesh.nx
        ix, iy = self.mesh.grid_coords(index)
        n_local = (p + 1) ** 2
        entries: list[dict[int, float]] = [None] * n_local
        v00 = iy * (nx + 1) + ix
        corner = {(0, 0): v00, (p, 0): v00 + 1, (0, p): v00 + nx + 1, (p, p): v00 + nx + 2}
        for (i, j), v in corner.items():
            entries[j * (p + 1) + i] = {v: 1.0}
        sides = {
            "bottom": [(i, 0) for i in range(1, p)],
            "top": [(i, p) for i in range(1, p)],
            "left": [(0, j) for j in range(1, p)],
            "right": [(p, j) for j in range(1, p)],
        }
        cons = []
        for side, pts in sides.items():
            if not pts:
                continue
            e = self._edge_id(side, ix, iy)
            pe = int(self.edge_order[e])
            trace = self.edge_trace_nodes(e)
            for i, j in pts:
                k = j * (p + 1) + i
                t = (i if side in ("bottom", "top") else j) / p
                if pe == p:
                    entries[k] = {int(trace[i if side in ("bottom", "top") else j]): 1.0}
                    continue
                vals, _ = lagrange_1d(np.linspace(0.0, 1.0, pe + 1), np.array([t]))
                vals = vals[0]
                keep = np.abs(vals) > 1e-13
                entries[k] = {int(g): float(c) for g, c in zip(trace[keep], vals[keep])}
                if not (keep.sum() == 1 and abs(vals[keep][0] - 1.0) < 1e-13):
                    cons.append(Constraint(index, k, tuple(entries[k]), tuple(entries[k].values())))
        s = self.interior_start[index]
        c = 0
        for j in range(1, p):
            for i in range(1, p):
                entries[j * (p + 1) + i] = {int(s + c): 1.0}
                c += 1
        simple = all(len(en) == 1 and abs(next(iter(en.values())) - 1.0) < 1e-13 for en in entries)
        if simple:
            return np.array([next(iter(en)) for en in entries]), None, cons
        nodes = np.array(sorted({g for en in entries for g in en}))
        pos = {g: a for a, g in enumerate(nodes)}
        C = np.zeros((n_local, len(nodes)))
        for k, en in enumerate(entries):
            for g, coef in en.items():
                C[k, pos[g]] = coef
        return nodes, C, cons

    def gather(self, index: int, u: np.ndarray) -> np.ndarray:
        """Element-local DOF values (constraint-resolved) from a global vector."""
        ue = u[self.element_dofs[index]]
        T = self.element_T[index]
        return ue if T is None else T @ ue

    def nearest_node(self, xy, exclude: np.ndarray | None = None) -> int:
        d = np.linalg.norm(self.coords - np.asarray(xy)[None, :], axis=1)
        if exclude is not None and len(exclude):
            d[exclude] = np.inf
        return int(np.argmin(d))


def build_constraints(mesh: MtoMesh) -> list[Constraint]:
    """Edge-conformity constraints between elements of different order (minimum rule)."""
    return DofMap(mesh).constraints


def count_free_dofs(mesh: MtoMesh, n_fixed: int = 0) -> int:
    """Global DOFs from the node bookkeeping: vertices, edge interiors, element interiors."""
    return DofMap(mesh).n_dofs - n_fixed


# --------------------------------------------------------------------------- boundary conditions


@dataclass
class Support:
    """Dirichlet condition on nodes selected by ``where(coords) -> mask``."""

    where: Callable[[np.ndarray], np.ndarray]
    components: tuple[int, ...] = (0, 1)
    value: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class PointLoad:
    x: float
    y: float
    fx: float = 0.0
    fy: float = 0.0


@dataclass
class EdgeTraction:
    """Uniform traction (force per length) on one side of the rectangular domain."""

    side: str
    tx: float = 0.0
    ty: float = 0.0


@dataclass
class Spring:
    x: float
    y: float
    component: int
    k: float


@dataclass
class OutputDof:
    x: float
    y: float
    component: int


@dataclass
class BoundaryConditions:
    supports: list[Support] = field(default_factory=list)
    point_loads: list[PointLoad] = field(default_factory=list)
    tractions: list[EdgeTraction] = field(default_factory=list)
    springs: list[Spring] = field(default_factory=list)
    output: OutputDof | None = None  # None -> z = f (compliance)


def _boundary_edges(dofmap: DofMap, side: str) -> list[int]:
    mesh = dofmap.mesh
    if side == "bottom":
        return [dofmap._edge_id("bottom", ix, 0) for ix in range(mesh.nx)]
    if side == "top":
        return [dofmap._edge_id("top", ix, mesh.ny - 1) for ix in range(mesh.nx)]
    if side == "left":
        return [dofmap._edge_id("left", 0, iy) for iy in range(mesh.ny)]
    if side == "right":
        return [dofmap._edge_id("right", mesh.nx - 1, iy) for iy in range(mesh.ny)]
    raise ConfigurationError(f"unknown side {side!r}")


def consistent_traction_loads(dofmap: DofMap, traction: EdgeTraction) -> np.ndarray:
    f = np.zeros(dofmap.n_dofs)
    h = dofmap.mesh.element_size
    for e in _boundary_edges(dofmap, traction.side):
        pe = int(dofmap.edge_order[e])
        x, w = np.polynomial.legendre.leggauss(pe + 1)
        vals, _ = lagrange_1d(np.linspace(0.0, 1.0, pe + 1), 0.5 * (x + 1.0))
        nodal = 0.5 * h * (w @ vals)
        nodes = dofmap.edge_trace_nodes(e)
        np.add.at(f, 2 * nodes, traction.tx * nodal)
        np.add.at(f, 2 * nodes + 1, traction.ty * nodal)
    return f


@dataclass
class BoundaryData:
    fixed: np.ndarray
    u_fixed: np.ndarray
    free: np.ndarray
    f: np.ndarray
    spring_diag: np.ndarray
    z: np.ndarray
    output_dof: int | None


def boundary_data(dm: DofMap, bcs: BoundaryConditions) -> BoundaryData:
    """Resolve supports, loads, springs and the objective vector onto global DOFs."""
    n = dm.n_dofs
    fixed = np.zeros(n, dtype=bool)
    u_fixed = np.zeros(n)
    for s in bcs.supports:
        mask = np.asarray(s.where(dm.coords), dtype=bool)
        nodes = np.nonzero(mask)[0]
        vals = None if s.value is None else np.atleast_2d(s.value(dm.coords[nodes]))
        for c in s.components:
            fixed[2 * nodes + c] = True
            if vals is not None:
                u_fixed[2 * nodes + c] = vals[:, c]
    free = np.nonzero(~fixed)[0]
    fixed_nodes = np.nonzero(fixed[0::2] & fixed[1::2])[0]

    f = np.zeros(n)
    for pl in bcs.point_loads:
        node = dm.nearest_node((pl.x, pl.y), fixed_nodes)
        f[2 * node] += pl.fx
        f[2 * node + 1] += pl.fy
    for tr in bcs.tractions:
        f += consistent_traction_loads(dm, tr)

    spring_diag = np.zeros(n)
    for spg in bcs.springs:
        node = dm.nearest_node((spg.x, spg.y), fixed_nodes)
        spring_diag[2 * node + spg.component] += spg.k

    if bcs.output is None:
        z, output_dof = f.copy(), None
    else:
        node = dm.nearest_node((bcs.output.x, bcs.output.y), fixed_nodes)
        output_dof = 2 * node + bcs.output.component
        z = np.zeros(n)
        z[output_dof] = 1.0
    if fixed.sum() < 3:
        raise ConfigurationError("at least 3 DOFs must be fixed")
    return BoundaryData(fixed, u_fixed, free, f, spring_diag, z, output_dof)


# --------------------------------------------------------------------------- assembly and solve


class AnalysisModel:
    """Fixed-configuration assembler: DOF map, element kernels, sparsity pattern and loads."""

    def __init__(self, mesh: MtoMesh, rules: Sequence[QuadratureRule], bcs: BoundaryConditions,
                 mat: MaterialModel, dofmap: DofMap | None = None):
        self.mesh = mesh
        self.rules = list(rules)
        self.bcs = bcs
        self.mat = mat
        self.dofmap = dofmap or DofMap(mesh)
        dm = self.dofmap
        h = mesh.element_size
        self.kernels = [element_kernel(e.p, r, h, mat) for e, r in zip(mesh.elements, self.rules)]
        self.point_offsets = np.concatenate([[0], np.cumsum([len(r) for r in self.rules])])

        # group unconstrained elements sharing a kernel for batched stiffness evaluation
        groups: dict[int, list[int]] = {}
        self.constrained = []
        for i, ker in enumerate(self.kernels):
            if dm.element_T[i] is None:
                groups.setdefault(id(ker), []).append(i)
            else:
                self.constrained.append(i)
        self.groups = [(self.kernels[idx[0]], np.array(idx)) for idx in groups.values()]

        rows, cols = [], []
        for ker, idx in self.groups:
            g = np.array([dm.element_dofs[i] for i in idx])
            rows.append(np.repeat(g, g.shape[1], axis=1).ravel())
            cols.append(np.tile(g, (1, g.shape[1])).ravel())
        for i in self.constrained:
            g = dm.element_dofs[i]
            rows.append(np.repeat(g, len(g)))
            cols.append(np.tile(g, len(g)))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        n = dm.n_dofs
        keys = rows.astype(np.int64) * n + cols
        uniq, self._scatter = np.unique(keys, return_inverse=True)
        self._nnz = len(uniq)
        urows = uniq // n
        self._indices = (uniq % n).astype(np.int32)
        self._indptr = np.searchsorted(urows, np.arange(n + 1)).astype(np.int32)

        self._setup_boundary()

    # ----------------------------------------------------------------- loads and supports
    def _setup_boundary(self):
        bd = boundary_data(self.dofmap, self.bcs)
        self.fixed, self.u_fixed, self.free = bd.fixed, bd.u_fixed, bd.free
        self.f, self.spring_diag, self.z, self.output_dof = bd.f, bd.spring_diag, bd.z, bd.output_dof

    @property
    def n_free(self) -> int:
        return len(self.free)

    # ----------------------------------------------------------------- assembly
    def element_moduli(self, rho_tilde: np.ndarray, mat: MaterialModel | None = None) -> np.ndarray:
        return simp_modulus(rho_tilde, mat or self.mat)

    def element_matrices(self, E: np.ndarray):
        """Yield ``(indices, stacked local K_e)`` per group, then constrained elements singly."""
        off = self.point_offsets
        for ker, idx in self.groups:
            Eg = np.stack([E[off[i] : off[i + 1]] for i in idx])
            yield idx, ker.stiffness(Eg)
        for i in self.constrained:
            yield np.array([i]), self.kernels[i].stiffness(E[off[i] : off[i + 1]])[None]

    def assemble(self, E: np.ndarray) -> sp.csr_matrix:
        vals = []
        dm = self.dofmap
        for idx, Ke in self.element_matrices(E):
            if len(idx) == 1 and dm.element_T[idx[0]] is not None:
                T = dm.element_T[idx[0]]
                vals.append((T.T @ Ke[0] @ T).ravel())
            else:
                vals.append(Ke.ravel())
        data = np.bincount(self._scatter, weights=np.concatenate(vals), minlength=self._nnz)
        n = dm.n_dofs
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(n, n))

    def solve(self, rho_tilde: np.ndarray, mat: MaterialModel | None = None) -> "AnalysisSystem":
        mat = mat or self.mat
        E = simp_modulus(np.asarray(rho_tilde, dtype=float), mat)
        K = self.assemble(E)
        free = self.free
        Kff = K[free][:, free]
        if self.spring_diag.any():
            Kff = Kff + sp.diags(self.spring_diag[free])
        rhs = self.f[free]
        if self.u_fixed.any():
            rhs = rhs - K[free] @ self.u_fixed
        factor = Factor(Kff)
        u = self.u_fixed.copy()
        u[free] = factor.solve(rhs)
        return AnalysisSystem(self, mat, np.asarray(rho_tilde, dtype=float), E, K, u, factor)


@dataclass
class AnalysisSystem:
    model: AnalysisModel
    mat: MaterialModel
    rho_tilde: np.ndarray
    E: np.ndarray
    K: sp.csr_matrix
    u: np.ndarray
    factor: Factor | None = None
    _adjoint: np.ndarray | None = None

    @property
    def f(self) -> np.ndarray:
        return self.model.f

    @property
    def z(self) -> np.ndarray:
        return self.model.z

    @property
    def dofmap(self) -> DofMap:
        return self.model.dofmap

    def residual(self) -> float:
        m = self.model
        free = m.free
        Ku = self.K[free] @ self.u + m.spring_diag[free] * self.u[free]
        nf = np.linalg.norm(m.f[free])
        return float(np.linalg.norm(Ku - m.f[free]) / (nf if nf > 0 else 1.0))

    def adjoint(self) -> np.ndarray:
        """Solution of ``K lambda = z`` (equals ``u`` for compliance)."""
        if self.factor is None:
            raise StateError("system has not been solved")
        if self._adjoint is None:
            m = self.model
            if m.bcs.output is None and not m.u_fixed.any():
                self._adjoint = self.u
            else:
                lam = np.zeros_like(self.u)
                lam[m.free] = self.factor.solve(m.z[m.free])
                self._adjoint = lam
        return self._adjoint

    def element_u(self, index: int) -> np.ndarray:
        return self.dofmap.gather(index, self.u)

    def element_K(self, index: int) -> np.ndarray:
        off = self.model.point_offsets
        return self.model.kernels[index].stiffness(self.E[off[index] : off[index + 1]])


def assemble_and_solve(mesh: MtoMesh, field, bcs: BoundaryConditions, mat: MaterialModel) -> AnalysisSystem:
    """One-shot assembly and solve for a projected density field."""
    model = AnalysisModel(mesh, field.rules, bcs, mat)
    return model.solve(field.rho_tilde)


def objective(system: AnalysisSystem) -> float:
    return float(system.z @ system.u)


def element_strain_energy(index: int, system: AnalysisSystem) -> float:
    ue = system.element_u(index)
    return 0.5 * float(ue @ system.element_K(index) @ ue)
