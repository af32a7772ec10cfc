"""Semi-analytic solution of layered Herschel-Bulkley Poiseuille flow.

Two fluid layers fill ``0 < y < h1`` (fluid 1) and ``h1 < y < h1 + h2``
(fluid 2) between no-slip walls and are driven by a uniform body force
``f`` along x.  With ``u = (u(y), 0)`` the momentum balance gives the affine
shear stress ``tau(y) = tau_c - f (y - h1)`` and the tensor law restricted
to simple shear reads

    tau = mu' |u'|^(p-2) u' + g' sign(u'),   mu' = mu 2^(-p/2),  g' = g / sqrt(2),

because ``|D| = |u'|/sqrt(2)`` for a shear flow.  Inverting the law,
``u' = sign(tau) ((|tau| - g')_+ / mu')^(1/(p-1))``, whose antiderivative in
``tau`` is available in closed form, so ``u(y)`` is exact up to the
root-finding for the interface stress ``tau_c``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .tensor import FluidParams, shear_law_1d


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelProblem:
    h1: float
    h2: float
    params1: FluidParams
    params2: FluidParams
    f: float

    def __post_init__(self):
        if not (self.h1 > 0 and self.h2 > 0):
            raise OracleError(f"layer heights must be positive, got {self.h1}, {self.h2}")
        if not (self.f >= 0 and math.isfinite(self.f)):
            raise OracleError(f"body force must be finite and nonnegative, got {self.f}")

    @property
    def height(self) -> float:
        return self.h1 + self.h2

    def with_force(self, f: float) -> ChannelProblem:
        return ChannelProblem(self.h1, self.h2, self.params1, self.params2, f)

    def layer(self, y):
        """1 below the interface, 2 above (the interface itself counts as 1)."""
        return np.where(np.asarray(y) <= self.h1, 1, 2)


class _Layer:
    def __init__(self, params: FluidParams):
        self.mu, self.g = shear_law_1d(params)
        self.q = 1.0 / (params.p - 1.0)

    def rate(self, tau):
        tau = np.asarray(tau, dtype=float)
        ex = np.maximum(np.abs(tau) - self.g, 0.0)
        return np.sign(tau) * (ex / self.mu) ** self.q

    def primitive(self, tau):
        """``int_0^tau rate``; even in ``tau``."""
        ex = np.maximum(np.abs(np.asarray(tau, dtype=float)) - self.g, 0.0)
        return ex ** (self.q + 1.0) / ((self.q + 1.0) * self.mu**self.q)


@dataclass
class ChannelSolution:
    problem: ChannelProblem
    tau_c: float
    rigid: bool
    plugs: list[tuple[float, float]]
    y: np.ndarray
    u: np.ndarray
    tau: np.ndarray
    phase: np.ndarray  # "flow" or "plug"

    def __call__(self, y) -> np.ndarray:
        return velocity_at(self.problem, self.tau_c, y, rigid=self.rigid)

    def stress(self, y) -> np.ndarray:
        return self.tau_c - self.problem.f * (np.asarray(y, dtype=float) - self.problem.h1)

    @property
    def flow_rate(self) -> float:
        return float(trapezoid(self.u, self.y))

    @property
    def u_max(self) -> float:
        return float(np.max(self.u))


def velocity_at(prob: ChannelProblem, tau_c: float, y, rigid: bool = False) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if rigid or prob.f == 0:
        return np.zeros_like(y)
    L1, L2 = _Layer(prob.params1), _Layer(prob.params2)
    f, h1 = prob.f, prob.h1
    tau = tau_c - f * (y - h1)
    tau0 = tau_c + f * h1
    u_low = -(L1.primitive(tau) - L1.primitive(tau0)) / f
    u_h1 = -(L1.primitive(tau_c) - L1.primitive(tau0)) / f
    u_up = u_h1 - (L2.primitive(tau) - L2.primitive(tau_c)) / f
    return np.where(y <= h1, u_low, u_up)


def _rigid_window(prob: ChannelProblem) -> tuple[float, float]:
    """Interval of interface stresses for which no point yields.

    ``tau`` is affine on each layer, so it suffices to test the layer ends.
    """
    g1 = shear_law_1d(prob.params1)[1]
    g2 = shear_law_1d(prob.params2)[1]
    f, h1, h2 = prob.f, prob.h1, prob.h2
    # tau(y) - tau_c at y = 0, h1 (layer 1) and y = h1, H (layer 2)
    lo = max(-g1 - f * h1, -g1, -g2, -g2 + f * h2)
    hi = min(g1 - f * h1, g1, g2, g2 + f * h2)
    return lo, hi


def is_rigid(prob: ChannelProblem) -> bool:
    lo, hi = _rigid_window(prob)
    return prob.f == 0 or lo <= hi


def plug_intervals(prob: ChannelProblem, tau_c: float) -> list[tuple[float, float]]:
    """Maximal subintervals of ``[0, H]`` where ``|tau| <= g'`` of the local fluid."""
    f, h1, H = prob.f, prob.h1, prob.height
    pieces = []
    for (a, b), params in (((0.0, h1), prob.params1), ((h1, H), prob.params2)):
        g = shear_law_1d(params)[1]
        if f == 0:
            if abs(tau_c) <= g:
                pieces.append((a, b))
            continue
        # tau_c - f (y - h1) in [-g, g]  <=>  y in [h1 + (tau_c - g)/f, h1 + (tau_c + g)/f]
        lo = max(a, h1 + (tau_c - g) / f)
        hi = min(b, h1 + (tau_c + g) / f)
        if lo < hi or (lo == hi and g > 0):
            pieces.append((lo, hi))
    merged: list[tuple[float, float]] = []
    for lo, hi in pieces:
        if merged and lo <= merged[-1][1] + 1e-15 * H:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def solve_channel(prob: ChannelProblem, samples: int = 201) -> ChannelSolution:
    """Exact layered profile sampled at ``samples`` equispaced heights."""
    if samples < 100:
        raise OracleError(f"need at least 100 samples, got {samples}")
    H = prob.height
    y = np.linspace(0.0, H, samples)
    if is_rigid(prob):
        lo, hi = _rigid_window(prob) if prob.f > 0 else (0.0, 0.0)
        tau_c = 0.5 * (lo + hi)
        rigid = True
    else:
        f = prob.f

        def top(tc):
            return float(velocity_at(prob, tc, H))

        # tau_c = -f h1 makes tau <= 0 on the whole channel, tau_c = f h2 makes it >= 0
        a, b = -f * prob.h1, f * prob.h2
        fa, fb = top(a), top(b)
        if not (fa <= 0.0 <= fb):
            raise OracleError(f"interface stress bracket failed: u(H) = {fa:g}, {fb:g}")
        if fa == 0.0:
            tau_c = a
        elif fb == 0.0:
            tau_c = b
        else:
            tau_c = brentq(top, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        scale = max(abs(fa), abs(fb))
        if abs(top(tau_c)) > 1e-12 * scale:
            raise OracleError(f"interface stress not resolved: residual {top(tau_c):g} vs scale {scale:g}")
        rigid = False
    sol_u = velocity_at(prob, tau_c, y, rigid=rigid)
    sol_u[0] = sol_u[-1] = 0.0
    tau = tau_c - prob.f * (y - prob.h1)
    gloc = np.where(prob.layer(y) == 1, shear_law_1d(prob.params1)[1], shear_law_1d(prob.params2)[1])
    phase = np.where(np.abs(tau) <= gloc, "plug", "flow")
    return ChannelSolution(prob, float(tau_c), rigid, plug_intervals(prob, tau_c), y, sol_u, tau, phase)


def yield_threshold(prob: ChannelProblem, rtol: float = 1e-14) -> float:
    """Supremum of the forces ``f`` for which the channel stays rigid.

    Bisection on ``f`` with :func:`is_rigid` (the oracle's rigid branch) as
    predicate.
    """
    if shear_law_1d(prob.params1)[1] == 0 or shear_law_1d(prob.params2)[1] == 0:
        # a fluid without yield stress flows under any positive force
        return 0.0
    lo, hi = 0.0, 1.0
    while is_rigid(prob.with_force(hi)):
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if is_rigid(prob.with_force(mid)):
            lo = mid
        else:
            hi = mid
    return lo


def write_profile_csv(path, sol: ChannelSolution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "u", "tau", "phase"])
        for y, u, t, ph in zip(sol.y, sol.u, sol.tau, sol.phase):
            w.writerow([repr(float(y)), repr(float(u)), repr(float(t)), ph])


def read_profile_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["y", "u", "tau", "phase"]:
        raise OracleError(f"{path}: expected header y,u,tau,phase")
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != 4 or r[3] not in ("flow", "plug"):
            raise OracleError(f"{path}:{i}: malformed profile row {r}")
    return {
        "y": np.array([float(r[0]) for r in body]),
        "u": np.array([float(r[1]) for r in body]),
        "tau": np.array([float(r[2]) for r in body]),
        "phase": np.array([r[3] for r in body]),
    }
