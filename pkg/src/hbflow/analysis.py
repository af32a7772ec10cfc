"""Comparison of finite element channel solutions with 1-D profiles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .fem import MixedField, MixedSpace, velocity_values
from .mesh import MeshError, channel_split_height
from .oracle import ChannelProblem
from .tensor import FluidParams


class NotAChannel(ValueError):
    pass


def channel_problem(space: MixedSpace, params: Mapping[int, FluidParams], forces) -> ChannelProblem:
    """1-D reduction of a periodic channel run; raises :class:`NotAChannel` otherwise."""
    mesh = space.mesh
    if len(mesh.periodic) == 0:
        raise NotAChannel("the 1-D reduction needs a periodic channel")
    try:
        h1 = channel_split_height(mesh)
    except MeshError as exc:
        raise NotAChannel(str(exc)) from None
    y0, y1 = mesh.nodes[:, 1].min(), mesh.nodes[:, 1].max()
    f1 = np.asarray(forces.get(1, (0.0, 0.0)), dtype=float)
    f2 = np.asarray(forces.get(2, (0.0, 0.0)), dtype=float)
    if f1[1] != 0 or f2[1] != 0 or f1[0] != f2[0] or f1[0] < 0:
        raise NotAChannel("the 1-D reduction needs the same nonnegative force along x in both fluids")
    return ChannelProblem(h1 - y0, y1 - h1, params[1], params[2], float(f1[0]))


def relative_l2_error(field: MixedField, profile: Callable[[np.ndarray], np.ndarray], y0: float = 0.0) -> float:
    """``|u_h - (U(y), 0)|_{L2} / |U|_{L2}`` by volume quadrature.

    Falls back to the absolute error when the reference profile vanishes.
    """
    space = field.space
    uq = velocity_values(space, field)
    ref = profile(space.qxy[..., 1] - y0)
    err2 = np.sum(space.wdet * ((uq[..., 0] - ref) ** 2 + uq[..., 1] ** 2))
    nrm2 = np.sum(space.wdet * ref**2)
    return float(np.sqrt(err2 / nrm2)) if nrm2 > 0 else float(np.sqrt(err2))


def nodal_profile(field: MixedField) -> tuple[np.ndarray, np.ndarray]:
    """x-averaged nodal ``u_x`` against height, for channel plots."""
    xy = field.space.p2_coords
    u = field.nodal_velocity()[:, 0]
    ys = np.round(xy[:, 1], 12)
    levels = np.unique(ys)
    return levels, np.array([u[ys == lv].mean() for lv in levels])


@dataclass
class PlugComparison:
    band: tuple[float, float] | None
    oracle: tuple[float, float] | None
    tolerance: float

    @property
    def offsets(self) -> tuple[float, float]:
        if self.band is None or self.oracle is None:
            return (np.inf, np.inf)
        return (abs(self.band[0] - self.oracle[0]), abs(self.band[1] - self.oracle[1]))

    @property
    def overlaps(self) -> bool:
        return max(self.offsets) <= self.tolerance


def plug_band(field: MixedField, rel: float = 1e-3) -> tuple[float, float] | None:
    """Height range where ``u_max - u_x <= rel * u_max`` on the P2 nodes."""
    y, u = nodal_profile(field)
    umax = u.max()
    if umax <= 0:
        return None
    sel = y[umax - u <= rel * umax]
    return float(sel.min()), float(sel.max())


def compare_plug(field: MixedField, plugs, cells: float = 2.0, rel: float = 1e-3) -> PlugComparison:
    """Compare the flat core of the computed profile with the oracle plug.

    The tolerance is ``cells`` times the vertical mesh spacing.
    """
    y, _ = nodal_profile(field)
    h = 2.0 * float(np.min(np.diff(y)))  # P2 nodes sit at half the cell height
    core = max(plugs, key=lambda p: p[1] - p[0]) if plugs else None
    return PlugComparison(plug_band(field, rel), core, cells * h)
