import numpy as np
import pytest

from conftest import NEWTON
from hbflow.analysis import NotAChannel, PlugComparison, channel_problem, compare_plug, nodal_profile, plug_band, relative_l2_error
from hbflow.fem import MixedSpace
from hbflow.mesh import generate_channel_mesh
from hbflow.tensor import FluidParams


def test_channel_problem(space8):
    prob = channel_problem(space8, NEWTON, {1: (2.0, 0.0), 2: (2.0, 0.0)})
    assert prob.h1 == 0.5 and prob.h2 == 0.5 and prob.f == 2.0
    with pytest.raises(NotAChannel):
        channel_problem(space8, NEWTON, {1: (1.0, 0.0), 2: (2.0, 0.0)})
    with pytest.raises(NotAChannel):
        channel_problem(space8, NEWTON, {1: (1.0, 1.0), 2: (1.0, 1.0)})
    box = MixedSpace(generate_channel_mesh(4, 4, closure="box"))
    with pytest.raises(NotAChannel):
        channel_problem(box, NEWTON, {1: (1.0, 0.0), 2: (1.0, 0.0)})


def test_relative_error_of_interpolant(space8):
    u = space8.interpolate(lambda x, y: (y * (1 - y), 0 * x))
    assert relative_l2_error(u, lambda y: y * (1 - y)) <= 1e-14
    assert relative_l2_error(u, lambda y: 2 * y * (1 - y)) == pytest.approx(0.5, rel=1e-12)
    assert relative_l2_error(space8.zero_field(), lambda y: 0 * y) == 0.0


def test_plug_band(space8):
    u = space8.interpolate(lambda x, y: (np.minimum(0.3, 2 * y * (1 - y)), 0 * x))
    y, prof = nodal_profile(u)
    assert len(y) == 17
    lo, hi = plug_band(u)
    # 2 y (1 - y) >= 0.3 on [0.1838, 0.8162]; nodes every 1/16
    assert lo == 0.1875 and hi == 0.8125
    pc = compare_plug(u, [(0.1838, 0.8162)])
    assert pc.tolerance == pytest.approx(2 / 8) and pc.overlaps
    assert not PlugComparison(None, (0, 1), 1.0).overlaps
    assert plug_band(space8.zero_field()) is None
