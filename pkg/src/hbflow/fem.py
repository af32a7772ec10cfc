"""Quadratic-velocity / linear-pressure finite elements on a two-phase mesh.

Velocity is one continuous P2 field over the whole domain, so the no-slip
transmission condition holds exactly on the interface.  Pressure is P1
within each fluid and carries two copies on every interface vertex.

Everything here is vectorized over elements; element-local arrays have a
leading axis ``e`` (element) and, at quadrature level, ``q``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, TwoPhaseMesh
from .tensor import FluidParams, SymTensor, effective_viscosity, frobenius_array

# -- quadrature -------------------------------------------------------------

_A = (6.0 - math.sqrt(15.0)) / 21.0
_B = (6.0 + math.sqrt(15.0)) / 21.0
_WA = (155.0 - math.sqrt(15.0)) / 2400.0
_WB = (155.0 + math.sqrt(15.0)) / 2400.0
# 7-point symmetric rule, exact to degree 5; weights sum to the reference area 1/2
RULE7_POINTS = np.array([
    [1 / 3, 1 / 3],
    [_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
    [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B],
])
RULE7_WEIGHTS = np.array([9 / 80, _WA, _WA, _WA, _WB, _WB, _WB])


def collapsed_gauss_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Duffy-collapsed tensor Gauss rule on the reference triangle, exact for
    polynomials of total degree ``degree``."""
    n = degree // 2 + 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    wts = (WU * WV * (1.0 - U)).ravel()
    return pts, wts


def gauss_edge_rule(n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1] with weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# -- reference P2 / P1 basis --------------------------------------------------

def p2_basis(ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(nq, 6)`` and reference gradients ``(nq, 6, 2)``.

    Local nodes: vertices 0, 1, 2 then midpoints of edges (0,1), (1,2), (2,0).
    """
    xi, eta = ref[:, 0], ref[:, 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lam = [l0, l1, l2]
    vals = np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=1)
    grads = np.empty((len(ref), 6, 2))
    for k in range(3):
        grads[:, k, :] = (4 * lam[k] - 1)[:, None] * dl[k]
    for m, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        grads[:, 3 + m, :] = 4 * (lam[a][:, None] * dl[b] + lam[b][:, None] * dl[a])
    return vals, grads


def p1_basis(ref: np.ndarray) -> np.ndarray:
    xi, eta = ref[:, 0], ref[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


# -- deterministic sparse scatter ---------------------------------------------

class _Scatter:
    """Sum element contributions into a fixed CSR pattern.

    The summation order depends only on the element order, never on how the
    element loop was split across threads.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        rows = rows.ravel()
        cols = cols.ravel()
        lin = rows.astype(np.int64) * shape[1] + cols
        uniq, inv = np.unique(lin, return_inverse=True)
        self.inv = inv
        self.nnz = len(uniq)
        self.shape = shape
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.zeros(shape[0] + 1, dtype=np.int32)
        np.add.at(self.indptr, r + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)

    def __call__(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.inv, weights=values.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def assembly_threads() -> int:
    try:
        return max(1, int(os.environ.get("HB_THREADS", "1")))
    except ValueError:
        return 1


_BLOCK = 2048


def _blocked(fn: Callable[[slice], np.ndarray], n: int) -> np.ndarray:
    """Evaluate ``fn`` over fixed element blocks and concatenate in order."""
    blocks = [slice(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)]
    threads = assembly_threads()
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0,))


# -- spaces and fields ---------------------------------------------------------

@dataclass(eq=False)
class MixedSpace:
    """Discrete velocity-pressure space on a :class:`TwoPhaseMesh`.

    Velocity dof ``2*k + c`` is component ``c`` at P2 node ``k``.  Pressure
    dofs are indexed by (vertex, fluid) pairs.
    """

    mesh: TwoPhaseMesh
    dirichlet: bool = True
    quad_points: np.ndarray = field(default_factory=lambda: RULE7_POINTS.copy())
    quad_weights: np.ndarray = field(default_factory=lambda: RULE7_WEIGHTS.copy())

    def __post_init__(self):
        mesh = self.mesh
        tris = mesh.triangles
        ne = len(tris)
        rep = mesh.rep
        vert_ids = {int(r): k for k, r in enumerate(np.unique(rep))}
        nv = len(vert_ids)
        node_xy = [None] * nv
        for i in range(mesh.n_nodes):
            k = vert_ids[int(rep[i])]
            if node_xy[k] is None or i == rep[i]:
                node_xy[k] = mesh.nodes[i]
        cells = np.empty((ne, 6), dtype=np.int64)
        edge_ids: dict[tuple, int] = {}
        edge_xy = []
        for t, tri in enumerate(tris):
            for k in range(3):
                cells[t, k] = vert_ids[int(rep[tri[k]])]
            for m in range(3):
                a, b = tri[m], tri[(m + 1) % 3]
                key = mesh.edge_key(a, b)
                if key not in edge_ids:
                    edge_ids[key] = nv + len(edge_ids)
                    edge_xy.append(0.5 * (mesh.nodes[a] + mesh.nodes[b]))
                cells[t, 3 + m] = edge_ids[key]
        self.n_p2 = nv + len(edge_ids)
        self.p2_coords = np.vstack([np.array(node_xy), np.array(edge_xy).reshape(-1, 2)])
        self.v_cells = cells
        self.n_vdof = 2 * self.n_p2
        self.v_dofs = np.empty((ne, 12), dtype=np.int64)
        self.v_dofs[:, 0::2] = 2 * cells
        self.v_dofs[:, 1::2] = 2 * cells + 1

        wall_nodes = set()
        for (a, b), lab in zip(mesh.boundary_edges, mesh.boundary_labels):
            if lab in (1, 2):
                wall_nodes.add(vert_ids[int(rep[a])])
                wall_nodes.add(vert_ids[int(rep[b])])
                wall_nodes.add(edge_ids[mesh.edge_key(a, b)])
        self.wall_nodes = np.array(sorted(wall_nodes), dtype=np.int64)
        mask = np.zeros(self.n_vdof, dtype=bool)
        if self.dirichlet:
            mask[2 * self.wall_nodes] = True
            mask[2 * self.wall_nodes + 1] = True
        self.dirichlet_mask = mask
        self.free = ~mask

        p_ids: dict[tuple[int, int], int] = {}
        p_xy = []
        p_tag = []
        self.p_cells = np.empty((ne, 3), dtype=np.int64)
        for t, tri in enumerate(tris):
            tag = int(mesh.tags[t])
            for k in range(3):
                key = (int(rep[tri[k]]), tag)
                if key not in p_ids:
                    p_ids[key] = len(p_ids)
                    p_xy.append(node_xy[vert_ids[key[0]]])
                    p_tag.append(tag)
                self.p_cells[t, k] = p_ids[key]
        self.n_pdof = len(p_ids)
        self.p_coords = np.array(p_xy)
        self.p_tags = np.array(p_tag)
        self.p_vertex = np.array([vert_ids[k[0]] for k in p_ids], dtype=np.int64)

        # geometry
        p0 = mesh.nodes[tris[:, 0]]
        J = np.stack([mesh.nodes[tris[:, 1]] - p0, mesh.nodes[tris[:, 2]] - p0], axis=2)  # (e, 2, 2)
        self.det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(self.det <= 0):
            raise MeshError("element with non-positive Jacobian")
        self.jac = J
        self.jinv = np.linalg.inv(J)
        self.origin = p0
        self.tags = mesh.tags.copy()
        self.set_quadrature(self.quad_points, self.quad_weights)
        self._scatter_vv = _Scatter(
            np.repeat(self.v_dofs, 12, axis=1), np.tile(self.v_dofs, (1, 12)), (self.n_vdof, self.n_vdof))
        self._scatter_pv = _Scatter(
            np.repeat(self.p_cells, 12, axis=1), np.tile(self.v_dofs, (1, 3)), (self.n_pdof, self.n_vdof))

    def set_quadrature(self, points, weights):
        self.quad_points = np.asarray(points, dtype=float)
        self.quad_weights = np.asarray(weights, dtype=float)
        self.N, dN_ref = p2_basis(self.quad_points)  # (q, 6), (q, 6, 2)
        self.M = p1_basis(self.quad_points)  # (q, 3)
        # physical gradients: grad N = J^{-T} grad_ref N
        self.dN = np.einsum("eba,qnb->eqna", self.jinv, dN_ref)  # (e, q, 6, 2)
        self.wdet = self.det[:, None] * self.quad_weights[None, :]  # (e, q)
        self.qxy = self.origin[:, None, :] + np.einsum("eab,qb->eqa", self.jac, self.quad_points)
        self.__dict__.pop("_dd_products", None)

    @property
    def n_elements(self) -> int:
        return len(self.det)

    def tag_mask(self, tag: int) -> np.ndarray:
        return self.tags == tag

    def zero_field(self) -> MixedField:
        return MixedField(self, np.zeros(self.n_vdof), np.zeros(self.n_pdof))

    def interpolate(self, fn: Callable, pressure: Callable | None = None, constrain: bool = False) -> MixedField:
        """Nodal interpolant of ``fn(x, y) -> (ux, uy)`` (vectorized)."""
        x, y = self.p2_coords[:, 0], self.p2_coords[:, 1]
        ux, uy = fn(x, y)
        u = np.empty(self.n_vdof)
        u[0::2] = np.broadcast_to(ux, x.shape)
        u[1::2] = np.broadcast_to(uy, x.shape)
        if constrain:
            u[self.dirichlet_mask] = 0.0
        if pressure is None:
            p = np.zeros(self.n_pdof)
        else:
            p = np.broadcast_to(pressure(self.p_coords[:, 0], self.p_coords[:, 1]), (self.n_pdof,)).astype(float)
        return MixedField(self, u, p)

    def random_field(self, rng: np.random.Generator, scale: float = 1.0) -> MixedField:
        u = scale * rng.standard_normal(self.n_vdof)
        u[self.dirichlet_mask] = 0.0
        return MixedField(self, u, np.zeros(self.n_pdof))


@dataclass(eq=False)
class MixedField:
    space: MixedSpace
    velocity: np.ndarray
    pressure: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.pressure = np.asarray(self.pressure, dtype=float)
        if self.velocity.shape != (self.space.n_vdof,) or self.pressure.shape != (self.space.n_pdof,):
            raise ValueError("coefficient vectors do not match the space")
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.pressure))):
            raise ValueError("field has non-finite coefficients")
        if np.any(self.velocity[self.space.dirichlet_mask] != 0.0):
            raise ValueError("field violates the wall no-slip constraint")

    def copy(self) -> MixedField:
        return MixedField(self.space, self.velocity.copy(), self.pressure.copy())

    def __add__(self, other: MixedField) -> MixedField:
        return MixedField(self.space, self.velocity + other.velocity, self.pressure + other.pressure)

    def __sub__(self, other: MixedField) -> MixedField:
        return MixedField(self.space, self.velocity - other.velocity, self.pressure - other.pressure)

    def __mul__(self, s: float) -> MixedField:
        return MixedField(self.space, s * self.velocity, s * self.pressure)

    __rmul__ = __mul__

    def nodal_velocity(self) -> np.ndarray:
        """Velocity at the P2 nodes, shape ``(n_p2, 2)``."""
        return self.velocity.reshape(-1, 2)


def _vel(u) -> np.ndarray:
    return u.velocity if isinstance(u, MixedField) else np.asarray(u, dtype=float)


# -- pointwise evaluation ---------------------------------------------------

def velocity_gradient(space: MixedSpace, u) -> np.ndarray:
    """``G[e, q, a, b] = d u_a / d x_b`` at all quadrature points."""
    loc = _vel(u)[space.v_dofs].reshape(-1, 6, 2)  # (e, node, comp)
    return np.einsum("enc,eqnb->eqcb", loc, space.dN)


def velocity_values(space: MixedSpace, u) -> np.ndarray:
    loc = _vel(u)[space.v_dofs].reshape(-1, 6, 2)
    return np.einsum("enc,qn->eqc", loc, space.N)


def rate_of_deformation_array(space: MixedSpace, u) -> np.ndarray:
    G = velocity_gradient(space, u)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def rate_of_deformation(field: MixedField, element: int, ref_point) -> SymTensor:
    """``(grad u + grad u^T)/2`` at reference point ``ref_point`` of ``element``."""
    space = field.space
    _, dN_ref = p2_basis(np.atleast_2d(np.asarray(ref_point, dtype=float)))
    dN = dN_ref[0] @ space.jinv[element]  # (6, 2)
    loc = field.velocity[space.v_dofs[element]].reshape(6, 2)
    G = loc.T @ dN
    return SymTensor.from_matrix(0.5 * (G + G.T))


def _per_tag(space: MixedSpace, params: Mapping[int, FluidParams], fn) -> np.ndarray:
    """Evaluate ``fn(mask, params)`` per fluid and scatter into ``(e, q)``."""
    out = np.empty(space.wdet.shape)
    for tag in (1, 2):
        m = space.tag_mask(tag)
        if m.any():
            out[m] = fn(m, params[tag])
    return out


# -- local matrices ------------------------------------------------------------

def _local_sym_grads(dN: np.ndarray) -> np.ndarray:
    """Symmetric gradients of the 12 vector basis functions, ``(e, q, 12, 2, 2)``."""
    e, q = dN.shape[:2]
    D = np.zeros((e, q, 12, 2, 2))
    for c in range(2):
        G = np.zeros((e, q, 6, 2, 2))
        G[:, :, :, c, :] = dN
        D[:, :, c::2] = 0.5 * (G + np.swapaxes(G, -1, -2))
    return D


# cache D(phi_i):D(phi_j) per quadrature point when it fits in this many bytes
_PRODUCT_CACHE_BYTES = 400 * 2**20


def _sym_grad_products(space: MixedSpace) -> np.ndarray | None:
    nbytes = space.wdet.size * 144 * 8
    if nbytes > _PRODUCT_CACHE_BYTES:
        return None
    cached = space.__dict__.get("_dd_products")
    if cached is None or cached.shape[:2] != space.wdet.shape:
        def block(s):
            D = _local_sym_grads(space.dN[s])
            return np.einsum("eqiab,eqjab->eqij", D, D).reshape(D.shape[0], D.shape[1], 144)

        cached = _blocked(block, space.n_elements)
        space.__dict__["_dd_products"] = cached
    return cached


def viscous_matrix(space: MixedSpace, eta: np.ndarray) -> sp.csr_matrix:
    """``int eta D(phi_j) : D(phi_i)`` for a viscosity given at quadrature points."""
    coef = eta * space.wdet
    prod = _sym_grad_products(space)
    if prod is not None:
        return space._scatter_vv(_blocked(lambda s: np.einsum("eq,eqk->ek", coef[s], prod[s]), space.n_elements))

    def block(s):
        D = _local_sym_grads(space.dN[s])
        return np.einsum("eq,eqiab,eqjab->eij", coef[s], D, D)

    return space._scatter_vv(_blocked(block, space.n_elements))


def viscosity_field(space: MixedSpace, state, params: Mapping[int, FluidParams]) -> np.ndarray:
    """Effective viscosity of ``state`` at every quadrature point."""
    dn = frobenius_array(rate_of_deformation_array(space, state))
    eta = _per_tag(space, params, lambda m, pr: effective_viscosity(dn[m], pr))
    if not np.all(np.isfinite(eta)):
        raise FloatingPointError("non-finite effective viscosity in quadrature")
    return eta


def assemble_viscous(space: MixedSpace, state, params: Mapping[int, FluidParams]) -> sp.csr_matrix:
    """Frozen-viscosity operator ``A(state)``."""
    return viscous_matrix(space, viscosity_field(space, state, params))


def assemble_convection(space: MixedSpace, w) -> sp.csr_matrix:
    """``C(w)`` with ``v^T C(w) u = int (w . grad u) . v`` over both fluids."""
    wq = velocity_values(space, w)

    def block(s):
        adv = np.einsum("eqa,eqna->eqn", wq[s], space.dN[s])  # w . grad N_b
        S = np.einsum("eq,qa,eqb->eab", space.wdet[s], space.N, adv)
        out = np.zeros((S.shape[0], 12, 12))
        out[:, 0::2, 0::2] = S
        out[:, 1::2, 1::2] = S
        return out

    return space._scatter_vv(_blocked(block, space.n_elements))


def assemble_divergence(space: MixedSpace) -> sp.csr_matrix:
    """``B[k, j] = int q_k div(phi_j)`` with per-fluid pressure test functions."""

    def block(s):
        # div(N_b e_d) = dN_b/dx_d
        div = space.dN[s].reshape(space.dN[s].shape[0], space.dN.shape[1], 12)
        return np.einsum("eq,qk,eqj->ekj", space.wdet[s], space.M, div)

    return space._scatter_pv(_blocked(block, space.n_elements))


def assemble_mass(space: MixedSpace) -> sp.csr_matrix:
    """Velocity L2 mass matrix."""

    def block(s):
        S = np.einsum("eq,qa,qb->eab", space.wdet[s], space.N, space.N)
        out = np.zeros((S.shape[0], 12, 12))
        out[:, 0::2, 0::2] = S
        out[:, 1::2, 1::2] = S
        return out

    return space._scatter_vv(_blocked(block, space.n_elements))


def assemble_stiffness(space: MixedSpace) -> sp.csr_matrix:
    """Full-gradient ``int grad u : grad v`` (vector Laplacian)."""

    def block(s):
        S = np.einsum("eq,eqaj,eqbj->eab", space.wdet[s], space.dN[s], space.dN[s])
        out = np.zeros((S.shape[0], 12, 12))
        out[:, 0::2, 0::2] = S
        out[:, 1::2, 1::2] = S
        return out

    return space._scatter_vv(_blocked(block, space.n_elements))


def pressure_mass_vector(space: MixedSpace) -> np.ndarray:
    vals = np.einsum("eq,qk->ek", space.wdet, space.M)
    return np.bincount(space.p_cells.ravel(), weights=vals.ravel(), minlength=space.n_pdof)


def assemble_load(space: MixedSpace, forces: Mapping[int, np.ndarray]) -> np.ndarray:
    """Load vector of piecewise-constant body forces ``{tag: (fx, fy)}``."""
    F = np.zeros(space.n_vdof)
    nint = np.einsum("eq,qa->ea", space.wdet, space.N)  # int N_a per element
    for tag in (1, 2):
        m = space.tag_mask(tag)
        f = np.asarray(forces.get(tag, (0.0, 0.0)), dtype=float)
        for c in range(2):
            np.add.at(F, space.v_dofs[m][:, c::2].ravel(), (nint[m] * f[c]).ravel())
    F[space.dirichlet_mask] = 0.0
    return F


def apply_dirichlet(K: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    """Zero the rows and columns of constrained dofs and put 1 on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    return (keep @ K @ keep + sp.diags(mask.astype(float))).tocsr()


@dataclass
class AssembledSystem:
    """Full saddle-point system ``[[A + C, -B^T], [-B, 0]] [u; p] = [F; 0]``.

    Dirichlet rows and columns are reduced to identity with zero right-hand
    side.  The pressure gauge is left open; :class:`hbflow.inner.SaddleSolver`
    fixes it when solving.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    state: np.ndarray  # velocity the viscosity was frozen at
    w: np.ndarray  # convecting velocity
    viscosity: np.ndarray  # (e, q) effective viscosity
    n_vdof: int

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_vdof], x[self.n_vdof:]


def assemble_system(space: MixedSpace, state, params: Mapping[int, FluidParams], forces,
                    w=None) -> AssembledSystem:
    eta = viscosity_field(space, state, params)
    K = viscous_matrix(space, eta)
    wv = np.zeros(space.n_vdof) if w is None else _vel(w)
    if np.any(wv):
        K = K + assemble_convection(space, wv)
    mask = space.dirichlet_mask
    K = apply_dirichlet(K, mask)
    B = assemble_divergence(space) @ sp.diags((~mask).astype(float))
    M = sp.bmat([[K, -B.T], [-B, None]], format="csr")
    F = assemble_load(space, forces)
    rhs = np.concatenate([F, np.zeros(space.n_pdof)])
    return AssembledSystem(M, rhs, _vel(state).copy(), wv.copy(), eta, space.n_vdof)


# -- functionals ---------------------------------------------------------------

def yield_functional(field, params: Mapping[int, FluidParams], space: MixedSpace | None = None) -> float:
    """``g_1 int_1 |D(v)| + g_2 int_2 |D(v)|`` by quadrature."""
    space = space or field.space
    dn = frobenius_array(rate_of_deformation_array(space, field))
    g = _per_tag(space, params, lambda m, pr: np.full(dn[m].shape, pr.g))
    return float(np.sum(g * dn * space.wdet))


def phi_action(space: MixedSpace, u, params: Mapping[int, FluidParams], exact: bool = True) -> np.ndarray:
    """Vector ``<phi_h(u), phi_i>`` of the power-law part of the operator.

    With ``exact=True`` the viscosity is ``mu |D|^(p-2)`` and the integrand is
    set to zero where ``D`` vanishes; otherwise the regularized power law
    without the yield term is used.
    """
    D = rate_of_deformation_array(space, u)
    dn = frobenius_array(D)

    def visc(m, pr):
        if exact:
            with np.errstate(divide="ignore"):
                return np.where(dn[m] > 0, pr.mu * dn[m] ** (pr.p - 2.0), 0.0)
        return pr.mu * (pr.eps**2 + dn[m] ** 2) ** (0.5 * (pr.p - 2.0))

    eta = _per_tag(space, params, visc)
    sigma = (eta * space.wdet)[..., None, None] * D

    def block(s):
        Db = _local_sym_grads(space.dN[s])
        return np.einsum("eqab,eqiab->ei", sigma[s], Db)

    loc = _blocked(block, space.n_elements)
    out = np.bincount(space.v_dofs.ravel(), weights=loc.ravel(), minlength=space.n_vdof)
    out[space.dirichlet_mask] = 0.0
    return out


def phi_pairing(space: MixedSpace, u, v, params: Mapping[int, FluidParams]) -> float:
    """``<phi(u), v>`` with the exact power law, evaluated pointwise."""
    Du = rate_of_deformation_array(space, u)
    Dv = rate_of_deformation_array(space, v)
    dn = frobenius_array(Du)

    def visc(m, pr):
        with np.errstate(divide="ignore"):
            return np.where(dn[m] > 0, pr.mu * dn[m] ** (pr.p - 2.0), 0.0)

    eta = _per_tag(space, params, visc)
    return float(np.sum(eta * space.wdet * np.einsum("eqab,eqab->eq", Du, Dv)))


@dataclass
class Norms:
    w1p: dict[int, float]
    v_norm: float
    l2: float
    l6: float


def norms(field, params: Mapping[int, FluidParams] | None = None, space: MixedSpace | None = None) -> Norms:
    """Per-fluid ``W^{1,p_i}`` norms, their sum, and ``L2``/``L6`` over the domain.

    Without ``params`` every fluid uses ``p = 2``.
    """
    space = space or field.space
    uq = velocity_values(space, field)
    G = velocity_gradient(space, field)
    mag = np.sqrt(np.sum(uq**2, axis=-1))
    gmag = frobenius_array(G)
    w1p = {}
    for tag in (1, 2):
        m = space.tag_mask(tag)
        p = params[tag].p if params is not None else 2.0
        w1p[tag] = float(np.sum(space.wdet[m] * (mag[m] ** p + gmag[m] ** p)) ** (1.0 / p))
    l2 = float(np.sqrt(np.sum(space.wdet * mag**2)))
    l6 = float(np.sum(space.wdet * mag**6) ** (1.0 / 6.0))
    return Norms(w1p, w1p[1] + w1p[2], l2, l6)


def l6_norm(space: MixedSpace, u) -> float:
    mag = np.sqrt(np.sum(velocity_values(space, u) ** 2, axis=-1))
    return float(np.sum(space.wdet * mag**6) ** (1.0 / 6.0))


def interface_jump(field: MixedField, npts: int = 3) -> float:
    """Largest velocity jump across the interface, sampled at edge Gauss points."""
    space = field.space
    mesh = space.mesh
    s, _ = gauss_edge_rule(npts)
    loc = field.velocity[space.v_dofs].reshape(-1, 6, 2)
    worst = 0.0
    for (a, b), (t1, t2) in zip(mesh.interface_edges, mesh.interface_triangles):
        key = mesh.edge_key(a, b)
        vals = []
        for t in (t1, t2):
            tri = mesh.triangles[t]
            for k in range(3):
                i, j = tri[k], tri[(k + 1) % 3]
                if mesh.edge_key(i, j) == key:
                    break
            lo_first = mesh.rep[i] == key[0]
            sp_ = s if lo_first else 1.0 - s
            ref = np.zeros((len(s), 2))
            # barycentric coordinates along local edge k -> k+1
            lam = np.zeros((len(s), 3))
            lam[:, k] = 1.0 - sp_
            lam[:, (k + 1) % 3] = sp_
            ref[:, 0], ref[:, 1] = lam[:, 1], lam[:, 2]
            N, _ = p2_basis(ref)
            vals.append(N @ loc[t])
        worst = max(worst, float(np.max(np.abs(vals[0] - vals[1]))))
    return worst


# -- analytic-field verification of the convection identity -------------------

@dataclass(frozen=True)
class AnalyticField:
    """Vector field given by callables for its value and its Jacobian.

    ``value(x, y)`` returns ``(2, ...)``; ``jacobian(x, y)`` returns
    ``(2, 2, ...)`` with ``J[a, b] = d v_a / d x_b``.
    """

    value: Callable
    jacobian: Callable

    @classmethod
    def from_sympy(cls, vx, vy) -> AnalyticField:
        import sympy

        x, y = sympy.symbols("x y")
        vx, vy = sympy.sympify(vx), sympy.sympify(vy)
        jac = [[sympy.diff(vx, x), sympy.diff(vx, y)], [sympy.diff(vy, x), sympy.diff(vy, y)]]
        fv = sympy.lambdify((x, y), [vx, vy], "numpy")
        fj = sympy.lambdify((x, y), jac, "numpy")

        def value(X, Y):
            return np.array([np.broadcast_to(c, np.shape(X)) for c in fv(X, Y)], dtype=float)

        def jacobian(X, Y):
            return np.array([[np.broadcast_to(c, np.shape(X)) for c in row] for row in fj(X, Y)], dtype=float)

        return cls(value, jacobian)


def trilinear_form(v1: AnalyticField, v2: AnalyticField, v3: AnalyticField, mesh: TwoPhaseMesh,
                   tag: int, degree: int = 16) -> float:
    """``int_{fluid tag} (v1 . grad v2) . v3`` by high-order volume quadrature."""
    pts, wts = collapsed_gauss_rule(degree)
    tris = mesh.triangles[mesh.tags == tag]
    p0 = mesh.nodes[tris[:, 0]]
    J = np.stack([mesh.nodes[tris[:, 1]] - p0, mesh.nodes[tris[:, 2]] - p0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    xy = p0[:, None, :] + np.einsum("eab,qb->eqa", J, pts)
    X, Y = xy[..., 0], xy[..., 1]
    a = v1.value(X, Y)
    G = v2.jacobian(X, Y)
    c = v3.value(X, Y)
    integrand = np.einsum("beq,abeq,aeq->eq", a, G, c)
    return float(np.sum(integrand * det[:, None] * wts[None, :]))


def interface_flux_term(v1: AnalyticField, v2: AnalyticField, v3: AnalyticField, mesh: TwoPhaseMesh,
                        npts: int = 10) -> float:
    """``int_{Gamma_0} (v1 . n)(v2 . v3)`` with ``n`` pointing from fluid 1 to fluid 2."""
    s, w = gauss_edge_rule(npts)
    total = 0.0
    for (a, b), nrm in zip(mesh.interface_edges, mesh.interface_normals):
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        xy = pa[None, :] + s[:, None] * (pb - pa)[None, :]
        X, Y = xy[:, 0], xy[:, 1]
        f = (nrm @ v1.value(X, Y)) * np.sum(v2.value(X, Y) * v3.value(X, Y), axis=0)
        total += float(np.sum(w * f)) * float(np.linalg.norm(pb - pa))
    return total


def trilinear_identity_sides(v1: AnalyticField, v2: AnalyticField, v3: AnalyticField,
                             mesh: TwoPhaseMesh, tag: int, degree: int = 16) -> tuple[float, float]:
    """Both sides of ``B_i(v1,v2,v3) + B_i(v1,v3,v2) = (-1)^(i+1) int_Gamma0 (v1.n)(v2.v3)``."""
    lhs = trilinear_form(v1, v2, v3, mesh, tag, degree) + trilinear_form(v1, v3, v2, mesh, tag, degree)
    rhs = (-1.0) ** (tag + 1) * interface_flux_term(v1, v2, v3, mesh, npts=degree // 2 + 2)
    return lhs, rhs


def trilinear_identity_residual(v1: AnalyticField, v2: AnalyticField, v3: AnalyticField,
                                mesh: TwoPhaseMesh, tag: int, degree: int = 16) -> float:
    lhs, rhs = trilinear_identity_sides(v1, v2, v3, mesh, tag, degree)
    return abs(lhs - rhs)
