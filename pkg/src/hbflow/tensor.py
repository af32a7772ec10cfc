"""Symmetric tensor algebra and the pointwise Herschel-Bulkley law.

Scalar-level objects (:class:`SymTensor`) are used for the public API and
the property suite; the ``*_array`` helpers evaluate the same formulas on
stacks of 2x2 matrices with shape ``(..., 2, 2)`` for the finite element
assembly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TRACE_TOL = 1e-10


class IncompressibilityError(ValueError):
    """Rate of deformation with a non-negligible trace."""


def exponent_window(dim: int = 2) -> tuple[float, float]:
    """Admissible power-law indices ``3n/(n+2) <= p <= 2``."""
    return 3.0 * dim / (dim + 2.0), 2.0


@dataclass(frozen=True)
class SymTensor:
    """Symmetric ``dim x dim`` tensor stored by its independent components.

    Components are ordered row-major over the upper triangle, so for
    ``dim = 2`` the entries are ``(t11, t12, t22)``.
    """

    dim: int
    entries: tuple[float, ...]

    def __post_init__(self):
        n = self.dim * (self.dim + 1) // 2
        if len(self.entries) != n:
            raise ValueError(f"dim {self.dim} tensor needs {n} entries, got {len(self.entries)}")
        object.__setattr__(self, "entries", tuple(float(e) for e in self.entries))

    @classmethod
    def from_matrix(cls, m) -> SymTensor:
        m = np.asarray(m, dtype=float)
        dim = m.shape[0]
        if m.shape != (dim, dim):
            raise ValueError("expected a square matrix")
        # symmetrize so that round-off asymmetry is not silently dropped
        s = 0.5 * (m + m.T)
        return cls(dim, tuple(s[i, j] for i in range(dim) for j in range(i, dim)))

    @classmethod
    def zero(cls, dim: int = 2) -> SymTensor:
        return cls(dim, (0.0,) * (dim * (dim + 1) // 2))

    @classmethod
    def identity(cls, dim: int = 2) -> SymTensor:
        return cls.from_matrix(np.eye(dim))

    def matrix(self) -> np.ndarray:
        m = np.empty((self.dim, self.dim))
        k = 0
        for i in range(self.dim):
            for j in range(i, self.dim):
                m[i, j] = m[j, i] = self.entries[k]
                k += 1
        return m

    def trace(self) -> float:
        return float(np.trace(self.matrix()))

    def dot(self, other: SymTensor) -> float:
        """Full contraction ``s_lm t_lm``."""
        return float(np.sum(self.matrix() * other.matrix()))

    def frobenius_norm(self) -> float:
        return math.sqrt(max(self.dot(self), 0.0))

    def __add__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self.dim, tuple(a + b for a, b in zip(self.entries, other.entries)))

    def __sub__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self.dim, tuple(a - b for a, b in zip(self.entries, other.entries)))

    def __neg__(self) -> SymTensor:
        return SymTensor(self.dim, tuple(-a for a in self.entries))

    def __mul__(self, s: float) -> SymTensor:
        return SymTensor(self.dim, tuple(s * a for a in self.entries))

    __rmul__ = __mul__


@dataclass(frozen=True)
class FluidParams:
    """Material record of one fluid: consistency, yield limit, power index.

    ``eps`` is the regularization length used in place of ``|D|`` near the
    origin.
    """

    mu: float
    g: float
    p: float
    eps: float = 1e-4
    dim: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"consistency mu must be positive, got {self.mu}")
        if not self.g >= 0:
            raise ValueError(f"yield limit g must be nonnegative, got {self.g}")
        if not self.eps > 0:
            raise ValueError(f"regularization eps must be positive, got {self.eps}")
        lo, hi = exponent_window(self.dim)
        if not lo - 1e-12 <= self.p <= hi + 1e-12:
            raise ValueError(
                f"power-law index p = {self.p} outside the admissible window "
                f"[{lo:g}, {hi:g}] for dimension {self.dim}"
            )

    def with_eps(self, eps: float) -> FluidParams:
        return replace(self, eps=eps)


def deviator(t: SymTensor) -> SymTensor:
    m = t.matrix()
    return SymTensor.from_matrix(m - np.trace(m) / t.dim * np.eye(t.dim))


def effective_viscosity(dnorm, params: FluidParams):
    """``mu (eps^2+s^2)^((p-2)/2) + g (eps^2+s^2)^(-1/2)`` for ``s = |D|``.

    Accepts scalars or arrays; always finite and strictly positive.
    """
    s2 = params.eps**2 + np.square(dnorm)
    eta = params.mu * s2 ** (0.5 * (params.p - 2.0)) + params.g / np.sqrt(s2)
    if np.ndim(eta) == 0:
        return float(eta)
    return eta


def hb_stress(d: SymTensor, params: FluidParams) -> SymTensor:
    """Regularized deviatoric stress ``eta(|d|) d`` for a trace-free ``d``."""
    dn = d.frobenius_norm()
    if abs(d.trace()) > TRACE_TOL * dn:
        raise IncompressibilityError(
            f"rate of deformation has trace {d.trace():.3e} (norm {dn:.3e}); "
            "the velocity field is not divergence-free"
        )
    return d * effective_viscosity(dn, params)


def power_law_flux(x: np.ndarray, p: float) -> np.ndarray:
    """``|x|^(p-2) x`` with the value 0 at the origin, over the trailing axes."""
    x = np.asarray(x, dtype=float)
    n = np.sqrt(np.sum(x * x, axis=tuple(range(1, x.ndim)) if x.ndim > 1 else None, keepdims=x.ndim > 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n > 0, n ** (p - 2.0) * x, 0.0)
    return out


def monotonicity_gap(x, y, p: float, c: float):
    """``(|x|^(p-2)x - |y|^(p-2)y).(x-y) - c |x-y|^2 / (|x|+|y|)^(2-p)``.

    ``x`` and ``y`` are :class:`SymTensor` values or arrays of shape
    ``(n, k)`` holding ``n`` pairs of vectors in any Euclidean coordinates
    (for symmetric tensors use :func:`sym_coords` so the Euclidean norm is
    the Frobenius norm).  Returns a float or an array of ``n`` gaps.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if not c > 0:
        raise ValueError("c must be positive")
    if isinstance(x, SymTensor):
        x = sym_coords(x)[None, :]
        y = sym_coords(y)[None, :]
        scalar = True
    else:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        scalar = False
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any((nx == 0) & (ny == 0)):
        raise ValueError("monotonicity gap is undefined for x = y = 0")
    fx = power_law_flux(x, p)
    fy = power_law_flux(y, p)
    lhs = np.sum((fx - fy) * (x - y), axis=1)
    rhs = np.sum((x - y) ** 2, axis=1) / (nx + ny) ** (2.0 - p)
    gap = lhs - c * rhs
    return float(gap[0]) if scalar else gap


def sym_coords(t: SymTensor) -> np.ndarray:
    """Isometric coordinates: off-diagonal entries scaled by sqrt(2)."""
    out = []
    k = 0
    for i in range(t.dim):
        for j in range(i, t.dim):
            out.append(t.entries[k] * (1.0 if i == j else math.sqrt(2.0)))
            k += 1
    return np.array(out)


# -- array versions used by assembly -------------------------------------

def frobenius_array(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", m, m))


def hb_stress_array(d: np.ndarray, params: FluidParams) -> np.ndarray:
    return effective_viscosity(frobenius_array(d), params)[..., None, None] * d


def potential_array(dnorm: np.ndarray, params: FluidParams) -> np.ndarray:
    """Convex potential whose gradient is the regularized stress.

    ``mu/p (eps^2+s^2)^(p/2) + g (eps^2+s^2)^(1/2)``, shifted to vanish at
    ``s = 0``.
    """
    e2 = params.eps**2
    # (1 + s^2/eps^2)^a - 1 via expm1/log1p keeps digits for s << eps
    ratio = np.square(dnorm) / e2
    pw = params.mu / params.p * e2 ** (0.5 * params.p) * np.expm1(0.5 * params.p * np.log1p(ratio))
    yl = params.g * math.sqrt(e2) * np.expm1(0.5 * np.log1p(ratio))
    return pw + yl


def shear_law_1d(params: FluidParams) -> tuple[float, float]:
    """Consistency and yield stress of the scalar law ``tau(gamma)`` obtained
    by restricting the tensor law to simple shear ``u = (u(y), 0)``.

    With ``D = gamma/2 [[0,1],[1,0]]`` one has ``|D| = |gamma|/sqrt(2)`` and
    ``sigma_xy = mu 2^(-p/2) |gamma|^(p-2) gamma + g/sqrt(2) sign(gamma)``.
    """
    return params.mu * 2.0 ** (-0.5 * params.p), params.g / math.sqrt(2.0)
