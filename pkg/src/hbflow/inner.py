"""Regularized viscoplastic Stokes-type solve for a frozen convective field.

For a given ``w`` this finds ``(u, pi)`` with

    A_eps(u) u + C(w) u - B^T pi = F,   B u = 0,

where ``A_eps(u)`` is the viscous operator with the effective viscosity
frozen at ``u``.  The nonlinearity is handled by damped Picard
(successive substitution) with continuation in the regularization length.
Each linear step is a direct sparse factorization of the saddle system.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    MixedField,
    MixedSpace,
    _per_tag,
    assemble_convection,
    assemble_divergence,
    assemble_load,
    frobenius_array,
    interface_jump,
    norms,
    phi_pairing,
    pressure_mass_vector,
    rate_of_deformation_array,
    viscous_matrix,
    yield_functional,
)
from .tensor import FluidParams, effective_viscosity, potential_array


class LinearSolveError(RuntimeError):
    """The discrete saddle system could not be factorized."""


@dataclass
class InnerConfig:
    eps_schedule: Sequence[float] = (1e-2, 1e-3, 1e-4)
    tol_rel: float = 1e-8
    max_picard: int = 200
    damping: float = 1.0
    anderson: int = 5

    def __post_init__(self):
        self.eps_schedule = tuple(float(e) for e in self.eps_schedule)
        if not self.eps_schedule:
            raise ValueError("eps_schedule must not be empty")
        if any(not (e > 0 and math.isfinite(e)) for e in self.eps_schedule):
            raise ValueError(f"eps values must be positive, got {self.eps_schedule}")
        if any(b >= a for a, b in zip(self.eps_schedule, self.eps_schedule[1:])):
            raise ValueError(f"eps_schedule must be strictly decreasing, got {self.eps_schedule}")
        if not 0 < self.tol_rel < 1:
            raise ValueError(f"tol_rel must lie in (0, 1), got {self.tol_rel}")
        if int(self.max_picard) != self.max_picard or self.max_picard < 1:
            raise ValueError(f"max_picard must be a positive integer, got {self.max_picard}")
        self.max_picard = int(self.max_picard)
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if int(self.anderson) != self.anderson or self.anderson < 0:
            raise ValueError(f"anderson depth must be a nonnegative integer, got {self.anderson}")
        self.anderson = int(self.anderson)

    @property
    def eps_final(self) -> float:
        return self.eps_schedule[-1]


@dataclass
class EnergyCheck:
    """A posteriori form of the energy estimate for the returned field.

    ``lhs = <phi(u), u> + j(u)`` with the unregularized law, ``rhs`` is the
    load work ``F.u`` plus the slack terms below; ``holds`` is ``lhs <= rhs``.
    """

    lhs: float
    load_work: float
    convection_defect: float
    regularization_gap: float
    algebraic_slack: float

    @property
    def rhs(self) -> float:
        return self.load_work + abs(self.convection_defect) + self.regularization_gap + self.algebraic_slack

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


@dataclass
class InnerReport:
    residuals: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    stage_iterations: list[int] = field(default_factory=list)
    eps_used: list[float] = field(default_factory=list)
    final_energy: float = float("nan")
    divergence_norm: float = float("nan")
    interface_defect: float = float("nan")
    converged: bool = False
    energy_check: EnergyCheck | None = None

    @property
    def iterations(self) -> int:
        return sum(self.stage_iterations)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


# -- linear algebra ---------------------------------------------------------------

_cache_lock = threading.Lock()


class SaddleSolver:
    """Direct solver for ``[K, -B^T; -B, 0]`` on the free velocity dofs.

    The pressure is determined up to a global constant; the first pressure
    dof is pinned during the solve and the result is shifted to zero mean.
    A fill-reducing nested dissection ordering of the (fixed) sparsity
    pattern is computed once and reused for every factorization.
    """

    def __init__(self, space: MixedSpace):
        self.space = space
        self.free = np.flatnonzero(space.free)
        self.B = assemble_divergence(space)
        self.Bf = self.B[:, self.free].tocsr()
        self.pmass = pressure_mass_vector(space)
        self._perm = None
        self._key = None
        self._ls = None
        self._lu = None
        self._lu_key = None
        # a factorization costs roughly sqrt(size) triangular solves (measured 22 at
        # 32x32 and 65 at 64x64); spend at most a third of that on the Krylov attempt
        self.krylov_its = max(8, int(math.sqrt(len(self.free) + self.Bf.shape[0]) / 8))
        self.n_factorizations = 0

    @classmethod
    def for_space(cls, space: MixedSpace) -> SaddleSolver:
        with _cache_lock:
            s = space.__dict__.get("_saddle_solver")
            if s is None:
                s = cls(space)
                space.__dict__["_saddle_solver"] = s
            return s

    def _pattern(self, K: sp.csr_matrix):
        """Permuted saddle pattern whose entries point back into ``K.data``.

        Every operator assembled on the space shares one CSR pattern, so the
        ordering and the scatter map are built once.
        """
        key = (hash(K.indptr.tobytes()), hash(K.indices.tobytes()), K.nnz)
        if self._perm is not None and self._key == key:
            return self._perm, self._mp, self._src
        nk = K.nnz
        Km = sp.csr_matrix((np.arange(1, nk + 1, dtype=float), K.indices, K.indptr), shape=K.shape)
        Kf = Km[self.free][:, self.free]
        Bp = self.Bf[1:]
        Bm = sp.csr_matrix((nk + 1 + np.arange(Bp.nnz, dtype=float), Bp.indices, Bp.indptr), shape=Bp.shape)
        M = sp.bmat([[Kf, Bm.T], [Bm, None]], format="csr")
        if self._perm is None:
            import pymetis

            G = M.copy()
            G.data[:] = 1.0
            G = (G + G.T).tocsr()
            G.setdiag(0)
            G.eliminate_zeros()
            G.sort_indices()
            perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(G.indptr, G.indices))
            self._perm = np.asarray(perm, dtype=np.int64)
        Mp = M[self._perm][:, self._perm].tocsc()
        Mp.sort_indices()
        self._src = Mp.data.astype(np.int64)
        self._mp = Mp
        self._key = key
        return self._perm, Mp, self._src

    def factorize(self, K: sp.spmatrix, reuse: bool = False):
        """Return a callable ``solve(rhs_free) -> (u_free, pressure)``.

        With ``reuse`` the factors of an earlier call on the same pattern
        precondition GMRES first, and a fresh factorization is computed only
        when that attempt misses the relative residual ``tol`` passed to
        ``solve`` (at most 1e-9, the bound of the direct path) within
        ``krylov_its`` iterations.  Successive Picard matrices differ little,
        so many steps skip the factorization.
        """
        K = K.tocsr()
        perm, Mp, src = self._pattern(K)
        vals = np.concatenate([[0.0], K.data, -self.Bf[1:].data])
        Mp = sp.csc_matrix((vals[src], Mp.indices, Mp.indptr), shape=Mp.shape)
        nf = len(self.free)
        attempts = [dict(diag_pivot_thresh=0.1),
                    dict(diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))]
        lagged = self._lu if reuse and self._lu_key == self._key else None

        def factor():
            while attempts:
                try:
                    f = spla.splu(Mp, permc_spec="NATURAL", **attempts.pop())
                except RuntimeError:
                    continue
                self._lu, self._lu_key = f, self._key
                self.n_factorizations += 1
                return f
            raise LinearSolveError("singular saddle-point system (check the pressure gauge and the element pair)")

        lu = [None if lagged is not None else factor()]

        def krylov(b, bn, tol):
            pre = spla.LinearOperator(Mp.shape, matvec=lagged.solve, dtype=float)
            # scipy's exit flag follows a preconditioned estimate; the true residual decides
            y, _ = spla.gmres(Mp, b, x0=lagged.solve(b), M=pre, rtol=0.1 * tol, atol=0.0,
                              restart=self.krylov_its, maxiter=1)
            if np.all(np.isfinite(y)) and np.linalg.norm(b - Mp @ y) <= tol * bn:
                return y
            return None

        def solve(rhs, tol: float = 1e-9):
            b = np.concatenate([rhs, np.zeros(Mp.shape[0] - nf)])[perm]
            bn = np.linalg.norm(b) or 1.0
            y = krylov(b, bn, min(tol, 1e-9)) if lu[0] is None else None
            if y is None and lu[0] is None:
                lu[0] = factor()
            while y is None:
                y = lu[0].solve(b)
                # one step of iterative refinement guards against weak pivots
                y += lu[0].solve(b - Mp @ y)
                if np.all(np.isfinite(y)) and (np.linalg.norm(b - Mp @ y) <= 1e-9 * bn or not attempts):
                    break
                # static pivots were not good enough; refactor with partial pivoting
                lu[0] = factor()
                y = None
            if not np.all(np.isfinite(y)):
                raise LinearSolveError("non-finite solution of the saddle-point system")
            x = np.empty_like(y)
            x[perm] = y
            p = np.concatenate([[0.0], x[nf:]])
            p -= self.pmass @ p / self.pmass.sum()
            return x[:nf], p

        return solve

    def least_squares_pressure(self, r: np.ndarray) -> np.ndarray:
        """Zero-mean ``pi`` minimizing ``|r - B^T pi|`` over the free dofs."""
        if self._ls is None:
            Bp = self.Bf[1:]
            self._ls = spla.splu((Bp @ Bp.T).tocsc())
        p = np.concatenate([[0.0], self._ls.solve(self.Bf[1:] @ r)])
        p -= self.pmass @ p / self.pmass.sum()
        return p


# -- nonlinear pieces ---------------------------------------------------------------

def _with_eps(params: Mapping[int, FluidParams], eps: float) -> dict[int, FluidParams]:
    return {t: params[t].with_eps(eps) for t in (1, 2)}


class _State:
    """Quantities of one velocity iterate shared by residual and energy."""

    def __init__(self, space: MixedSpace, u: np.ndarray, params, C, F):
        dn = frobenius_array(rate_of_deformation_array(space, u))
        eta = _per_tag(space, params, lambda m, pr: effective_viscosity(dn[m], pr))
        if not np.all(np.isfinite(eta)):
            raise FloatingPointError("non-finite effective viscosity")
        psi = _per_tag(space, params, lambda m, pr: potential_array(dn[m], pr))
        self.K = viscous_matrix(space, eta)
        if C is not None:
            # both operators come from the same scatter pattern
            self.K = sp.csr_matrix((self.K.data + C.data, self.K.indices, self.K.indptr), shape=self.K.shape)
        self.energy = float(np.sum(psi * space.wdet)) - float(F @ u)
        if C is not None:
            self.energy += 0.5 * float(u @ (C @ u))


def energy(field: MixedField, w, params: Mapping[int, FluidParams], forces) -> float:
    """Merit function ``sum_i int Psi_i(|D u|) + 1/2 C(w)u.u - F.u``.

    ``Psi_i`` is the convex potential of the regularized law of fluid ``i``
    (zero at the origin).  For ``w = 0`` this is the functional whose
    minimizer is the inner solution.
    """
    space = field.space
    F = assemble_load(space, forces)
    C = None
    if w is not None and np.any(_velocity(w) != 0):
        C = assemble_convection(space, w)
    return _State(space, field.velocity, params, C, F).energy


def _velocity(w) -> np.ndarray:
    return w.velocity if isinstance(w, MixedField) else np.asarray(w, dtype=float)


def _regularization_gap(space: MixedSpace, params, eps: float) -> float:
    gap = 0.0
    for t in (1, 2):
        area = float(np.sum(space.wdet[space.tag_mask(t)]))
        gap += area * (params[t].g * eps + params[t].mu * eps ** params[t].p)
    return gap


def solve_inner(w, space: MixedSpace, params: Mapping[int, FluidParams], forces,
                cfg: InnerConfig | None = None, u0: MixedField | None = None,
                warm: bool = False) -> tuple[MixedField, InnerReport]:
    """Solve the regularized inner problem for the frozen field ``w``.

    ``forces`` maps subdomain tags to constant body forces.  ``u0`` is an
    initial guess; with ``warm=True`` only the last eps of the schedule is
    run (the guess is assumed to be close already).
    """
    cfg = cfg or InnerConfig()
    if not space.dirichlet:
        raise ValueError("the inner solve needs a space with the wall constraint")
    wv = np.zeros(space.n_vdof) if w is None else _velocity(w)
    if wv.shape != (space.n_vdof,) or not np.all(np.isfinite(wv)):
        raise ValueError("convective field does not match the space or is not finite")
    if np.any(wv[space.dirichlet_mask] != 0):
        raise ValueError("convective field violates the wall no-slip constraint")
    for t in (1, 2):
        if not np.all(np.isfinite(np.asarray(forces.get(t, (0.0, 0.0)), dtype=float))):
            raise ValueError(f"body force of fluid {t} is not finite")

    solver = SaddleSolver.for_space(space)
    free = solver.free
    F = assemble_load(space, forces)
    Ff = F[free]
    fscale = float(np.linalg.norm(Ff)) or 1.0
    has_w = bool(np.any(wv != 0))
    C = assemble_convection(space, wv) if has_w else None

    u = np.zeros(space.n_vdof) if u0 is None else np.array(u0.velocity, dtype=float)
    rep = InnerReport()
    schedule = cfg.eps_schedule[-1:] if warm else cfg.eps_schedule

    def residual(state, u):
        r = state.K[free] @ u - Ff
        p = solver.least_squares_pressure(r)
        return float(np.linalg.norm(r - solver.Bf.T @ p)) / fscale, p

    pressure = np.zeros(space.n_pdof)
    for stage, eps in enumerate(schedule):
        pr = _with_eps(params, eps)
        last = stage == len(schedule) - 1
        st = _State(space, u, pr, C, F)
        res, pressure = residual(st, u)
        rep.residuals.append(res)
        rep.energies.append(st.energy)
        rep.eps_used.append(eps)
        best = (res, u, pressure)
        theta = cfg.damping
        hist_g: list[np.ndarray] = []
        hist_f: list[np.ndarray] = []
        it = 0
        while res > cfg.tol_rel and it < cfg.max_picard:
            solve = solver.factorize(st.K, reuse=True)
            g = np.zeros(space.n_vdof)
            # inexact steps: the linear error only has to stay below the nonlinear residual
            g[free], _ = solve(Ff, tol=max(1e-13, 0.1 * cfg.tol_rel, min(1e-9, 1e-2 * res)))
            f = g - u
            hist_g.append(g)
            hist_f.append(f)
            if len(hist_g) > cfg.anderson + 1:
                hist_g.pop(0)
                hist_f.pop(0)

            def accept(cst, cres):
                if has_w:
                    return cres <= res
                return cst.energy <= st.energy + cfg.tol_rel * abs(st.energy)

            taken = None
            if len(hist_g) > 1:
                dF = np.stack([b[free] - a[free] for a, b in zip(hist_f, hist_f[1:])], axis=1)
                dG = np.stack([b - a for a, b in zip(hist_g, hist_g[1:])], axis=1)
                gamma = np.linalg.lstsq(dF, f[free], rcond=1e-10)[0]
                cand = g - dG @ gamma - (1.0 - theta) * (f - np.stack([b - a for a, b in zip(hist_f, hist_f[1:])], axis=1) @ gamma)
                cand[space.dirichlet_mask] = 0.0
                cst = _State(space, cand, pr, C, F)
                cres, cp = residual(cst, cand)
                if accept(cst, cres):
                    taken = (cand, cst, cres, cp)
                else:
                    # mixing overshot: fall back to a plain step and restart the history
                    hist_g, hist_f = [g], [f]
            if taken is None:
                while True:
                    cand = u + theta * f
                    cst = _State(space, cand, pr, C, F)
                    cres, cp = residual(cst, cand)
                    if accept(cst, cres) or theta < 2.0**-10:
                        break
                    theta *= 0.5
                taken = (cand, cst, cres, cp)
                theta = min(cfg.damping, 2.0 * theta)
            u, st, res, pressure = taken
            it += 1
            rep.residuals.append(res)
            rep.energies.append(st.energy)
            if res < best[0]:
                best = (res, u, pressure)
        rep.stage_iterations.append(it)
        if last:
            rep.converged = res <= cfg.tol_rel
            if not rep.converged:
                res, u, pressure = best
            rep.final_energy = _State(space, u, pr, C, F).energy

    out = MixedField(space, u, pressure)
    rep.divergence_norm = float(np.linalg.norm(solver.B @ u))
    rep.interface_defect = interface_jump(out)
    eps = schedule[-1]
    r_alg = _State(space, u, _with_eps(params, eps), C, F).K[free] @ u - Ff - solver.Bf.T @ pressure
    rep.energy_check = EnergyCheck(
        lhs=phi_pairing(space, u, u, params) + yield_functional(out, params),
        load_work=float(F @ u),
        convection_defect=float(u @ (C @ u)) if C is not None else 0.0,
        regularization_gap=_regularization_gap(space, params, eps),
        algebraic_slack=abs(float(u[free] @ r_alg)) + abs(float(pressure @ (solver.B @ u))),
    )
    return out, rep


def v_norm(field: MixedField, params: Mapping[int, FluidParams]) -> float:
    return norms(field, params).v_norm
