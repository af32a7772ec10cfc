"""Fixed-point iteration for the convective transmission problem.

The map ``L(w) = u`` freezes the convecting field ``w`` and returns the
inner solution; a fixed point ``L(u) = u`` is a solution of the full
problem.  Besides the iteration this module provides the diagnostics used
to check a computed fixed point: the a priori ball radius, a battery of
random test fields for the variational inequality, and a measured
continuity ratio of ``L``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    MixedField,
    MixedSpace,
    assemble_convection,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    l6_norm,
    norms,
    phi_pairing,
    viscous_matrix,
    yield_functional,
)
from .inner import InnerConfig, InnerReport, SaddleSolver, solve_inner
from .tensor import FluidParams

log = logging.getLogger(__name__)


@dataclass
class OuterConfig:
    tol_fixed_point: float = 1e-7
    max_outer: int = 50
    relaxation: float = 1.0

    def __post_init__(self):
        if not self.tol_fixed_point > 0:
            raise ValueError(f"tol_fixed_point must be positive, got {self.tol_fixed_point}")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError(f"max_outer must be a positive integer, got {self.max_outer}")
        self.max_outer = int(self.max_outer)
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")


@dataclass
class OuterReport:
    l6_diffs: list[float] = field(default_factory=list)
    v_norms: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    relaxation: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    converged: bool = False
    scale: float = 0.0
    R: float | None = None
    inner: InnerReport | None = None

    @property
    def iterations(self) -> int:
        return len(self.l6_diffs)

    @property
    def ball_ok(self) -> list[bool]:
        if self.R is None:
            return []
        return [v <= self.R for v in self.v_norms]

    @property
    def in_ball(self) -> bool:
        return all(self.ball_ok)


def _forces(forces) -> dict[int, np.ndarray]:
    return {t: np.asarray(forces.get(t, (0.0, 0.0)), dtype=float) for t in (1, 2)}


def solve_transmission(space: MixedSpace, params: Mapping[int, FluidParams], forces,
                       inner_cfg: InnerConfig | None = None, outer_cfg: OuterConfig | None = None,
                       R: float | None = None) -> tuple[MixedField, OuterReport]:
    """Relaxed Picard iteration ``u <- (1 - a) u + a L(u)`` from ``u = 0``.

    Stops when ``|L(u) - u|_{L6} <= tol * |L(u)|_{L6}`` and returns
    ``L(u)``.  If ``R`` is given, the V-norm of every iterate is compared
    with it in the report.
    """
    inner_cfg = inner_cfg or InnerConfig()
    outer_cfg = outer_cfg or OuterConfig()
    forces = _forces(forces)
    rep = OuterReport(R=R)
    u = space.zero_field()
    alpha = outer_cfg.relaxation
    Ju = None
    for k in range(outer_cfg.max_outer):
        Ju, irep = solve_inner(u, space, params, forces, inner_cfg, u0=Ju, warm=Ju is not None)
        rep.inner = irep
        rep.inner_iterations.append(irep.iterations)
        diff = l6_norm(space, Ju.velocity - u.velocity)
        scale = l6_norm(space, Ju)
        rep.l6_diffs.append(diff)
        rep.v_norms.append(norms(Ju, params).v_norm)
        rep.relaxation.append(alpha)
        if k > 0:
            prev = rep.l6_diffs[-2]
            rep.ratios.append(diff / prev if prev > 0 else 0.0)
        rep.scale = scale
        log.info("outer %d: L6 diff %.3e (scale %.3e), inner its %d", k, diff, scale, irep.iterations)
        if not irep.converged:
            log.warning("inner solve %d did not reach its tolerance (residual %.2e)", k, irep.final_residual)
        if diff <= outer_cfg.tol_fixed_point * scale:
            rep.converged = irep.converged
            break
        if k > 0 and diff > rep.l6_diffs[-2]:
            alpha *= 0.5
        u = MixedField(space, (1 - alpha) * u.velocity + alpha * Ju.velocity, Ju.pressure)
        rep.v_norms[-1] = max(rep.v_norms[-1], norms(u, params).v_norm)
    return Ju, rep


# -- a priori radius ----------------------------------------------------------------

def korn_constant(space: MixedSpace, params: Mapping[int, FluidParams]) -> float:
    """Smallest ``lambda`` with ``sum mu_i |D u|_2^2 >= lambda |u|_{H1}^2`` on the discrete space.

    The probe runs over all fields vanishing on the walls (not only the
    divergence-free ones), which can only lower the constant.
    """
    cached = space.__dict__.get("_korn")
    key = (params[1].mu, params[2].mu)
    if cached is not None and cached[0] == key:
        return cached[1]
    eta = np.where(space.tags[:, None] == 1, params[1].mu, params[2].mu) * np.ones_like(space.wdet)
    A = viscous_matrix(space, eta)
    H = assemble_mass(space) + assemble_stiffness(space)
    fr = space.free
    A = A[fr][:, fr].tocsc()
    H = H[fr][:, fr].tocsc()
    # fixed start vector: ARPACK otherwise draws a random one and R changes in the last digit
    v0 = np.ones(A.shape[0])
    vals = spla.eigsh(A, k=1, M=H, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)
    lam = float(np.min(vals))
    # rigid motions give lambda at roundoff level when the walls are missing
    if not lam > 1e-10 * max(params[1].mu, params[2].mu):
        raise ValueError(f"degenerate Korn probe (lambda = {lam:g}); the wall constraint is missing")
    space.__dict__["_korn"] = (key, lam)
    return lam


def estimate_R(params: Mapping[int, FluidParams], forces, space: MixedSpace) -> float:
    """Radius of a ball in V that contains every solution.

    Testing with ``v = 0`` and dropping the yield term gives
    ``c_K sum_i |u_i|^{p_i} <= |f|_* |u|_V``.  With ``rho = |f|_* / c_K``
    this yields ``|u|_V <= rho^(1/(p_min-1))`` when ``rho >= 1`` and
    ``rho^(1/(p_max-1))`` otherwise; the larger of the two is returned.
    """
    forces = _forces(forces)
    lam = korn_constant(space, params)
    fdual = 0.0
    kappa = 1.0
    for t in (1, 2):
        area = float(np.sum(space.wdet[space.tag_mask(t)]))
        p = params[t].p
        pc = p / (p - 1.0)
        fdual = max(fdual, float(np.linalg.norm(forces[t])) * area ** (1.0 / pc))
        # |w|_{W1,p} <= kappa |w|_{H1} on a domain of this size
        kappa = max(kappa, (2.0 * area) ** (1.0 / p - 0.5))
    if fdual == 0.0:
        return 0.0
    cK = lam / (2.0 * kappa**2)
    rho = fdual / cK
    pmin = min(params[1].p, params[2].p)
    pmax = max(params[1].p, params[2].p)
    return float(max(rho ** (1.0 / (pmin - 1.0)), rho ** (1.0 / (pmax - 1.0))))


# -- diagnostics --------------------------------------------------------------------

def divergence_free_projection(space: MixedSpace, v: np.ndarray) -> np.ndarray:
    """H1-orthogonal projection of ``v`` onto the discretely divergence-free fields."""
    solver = SaddleSolver.for_space(space)
    S, M = assemble_stiffness(space), assemble_mass(space)
    K = sp.csr_matrix((S.data + M.data, S.indices, S.indptr), shape=S.shape)
    key = "_h1_projector"
    solve = space.__dict__.get(key)
    if solve is None:
        solve = solver.factorize(K)
        space.__dict__[key] = solve
    out = np.zeros(space.n_vdof)
    out[solver.free], _ = solve((K @ v)[solver.free])
    return out


def random_admissible(space: MixedSpace, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    """Smooth random field vanishing on the walls, projected to divergence-free."""
    x, y = space.p2_coords[:, 0], space.p2_coords[:, 1]
    xmin, ymin = space.mesh.nodes.min(axis=0)
    xmax, ymax = space.mesh.nodes.max(axis=0)
    sx = 2 * np.pi * (x - xmin) / max(xmax - xmin, 1e-300)
    sy = np.pi * (y - ymin) / max(ymax - ymin, 1e-300)
    v = np.zeros(space.n_vdof)
    for c in range(2):
        acc = np.zeros_like(x)
        for _ in range(modes):
            kx = rng.integers(0, 3)
            ky = rng.integers(1, 4)
            ph = rng.uniform(0, 2 * np.pi)
            acc += rng.standard_normal() * np.sin(ky * sy) * np.cos(kx * sx + ph)
        v[c::2] = acc
    v += 0.1 * rng.standard_normal(space.n_vdof)
    v[space.dirichlet_mask] = 0.0
    return divergence_free_projection(space, v)


@dataclass
class InequalityBattery:
    slacks: np.ndarray
    scales: np.ndarray
    tol: float

    @property
    def min_relative(self) -> float:
        return float(np.min(self.slacks / self.scales))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slacks >= -self.tol * self.scales))


def inequality_slack(u: MixedField, v: np.ndarray, params: Mapping[int, FluidParams], forces) -> tuple[float, float]:
    """Left minus right side of the variational inequality for test field ``v``.

    Returns ``(slack, scale)`` where ``scale`` is the largest magnitude of the
    individual terms, so ``slack / scale`` is a relative defect.
    """
    space = u.space
    d = v - u.velocity
    F = assemble_load(space, _forces(forces))
    conv = float(d @ (assemble_convection(space, u) @ u.velocity))
    phi = phi_pairing(space, u, d, params)
    vfield = MixedField(space, v, np.zeros(space.n_pdof))
    jv = yield_functional(vfield, params)
    ju = yield_functional(u, params)
    load = float(F @ d)
    terms = np.array([conv, phi, jv, ju, load])
    slack = conv + phi + jv - ju - load
    return float(slack), float(max(np.max(np.abs(terms)), 1e-300))


def inequality_battery(u: MixedField, params: Mapping[int, FluidParams], forces, n: int = 20,
                       seed: int = 0, tol: float = 1e-6) -> InequalityBattery:
    """Evaluate the inequality for ``n`` random admissible test fields.

    Test fields are ``v = u + t z`` with smooth divergence-free ``z`` scaled
    to ``|t z|_V`` between 1e-3 and 1 times ``max(|u|_V, 1)``.
    """
    space = u.space
    rng = np.random.default_rng(seed)
    base = max(norms(u, params).v_norm, 1.0)
    amps = np.logspace(-3, 0, n)
    slacks, scales = [], []
    for a in amps:
        z = random_admissible(space, rng)
        zn = norms(MixedField(space, z, np.zeros(space.n_pdof)), params).v_norm
        v = u.velocity + (a * base / zn) * z
        s, sc = inequality_slack(u, v, params, forces)
        slacks.append(s)
        scales.append(sc)
    return InequalityBattery(np.array(slacks), np.array(scales), tol)


@dataclass
class ContinuityDiagnostic:
    deltas: np.ndarray
    ratios: np.ndarray
    spread_limit: float = 10.0

    @property
    def spread(self) -> float:
        r = self.ratios
        if np.all(r == 0):
            return 1.0
        return float(np.max(r) / max(np.min(r), 1e-300))

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)) and self.spread <= self.spread_limit)


def continuity_diagnostic(u: MixedField, params: Mapping[int, FluidParams], forces,
                          inner_cfg: InnerConfig | None = None, scales=(1e-2, 1e-3, 1e-4),
                          seed: int = 1, spread_limit: float = 10.0) -> ContinuityDiagnostic:
    """Ratios ``|L(u + d) - L(u)|_{L6} / |d|_{L6}`` for shrinking admissible ``d``."""
    space = u.space
    inner_cfg = inner_cfg or InnerConfig()
    rng = np.random.default_rng(seed)
    ref = max(l6_norm(space, u), 1e-300)
    base, _ = solve_inner(u, space, params, forces, inner_cfg, u0=u, warm=True)
    z = random_admissible(space, rng)
    z /= l6_norm(space, z)
    deltas, ratios = [], []
    for s in scales:
        d = s * ref * z
        w = MixedField(space, u.velocity + d, u.pressure)
        Jw, _ = solve_inner(w, space, params, forces, inner_cfg, u0=base, warm=True)
        deltas.append(l6_norm(space, d))
        ratios.append(l6_norm(space, Jw.velocity - base.velocity) / deltas[-1])
    return ContinuityDiagnostic(np.array(deltas), np.array(ratios), spread_limit)
