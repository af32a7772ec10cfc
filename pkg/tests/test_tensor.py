import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbflow.tensor import (
    FluidParams,
    IncompressibilityError,
    SymTensor,
    deviator,
    effective_viscosity,
    hb_stress,
    hb_stress_array,
    monotonicity_gap,
    potential_array,
    shear_law_1d,
    sym_coords,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def shear(s):
    return SymTensor(2, (0.0, s, 0.0))


def test_deviator_examples():
    assert deviator(SymTensor.identity()).frobenius_norm() == 0.0
    d = deviator(SymTensor(2, (3.0, 0.0, 1.0)))
    assert d.entries == pytest.approx((1.0, 0.0, -1.0))
    t = SymTensor(2, (0.0, 1.0, 0.0))
    assert deviator(t).entries == t.entries


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite)
def test_deviator_idempotent(a, b, c):
    t = SymTensor(2, (a, b, c))
    d = deviator(t)
    assert abs(d.trace()) <= 1e-12 * (1 + t.frobenius_norm())
    assert np.allclose(deviator(d).entries, d.entries, atol=1e-12 * (1 + t.frobenius_norm()))


def test_frobenius_norm():
    t = SymTensor(2, (1.0, 2.0, 3.0))
    assert t.frobenius_norm() == pytest.approx(math.sqrt(1 + 2 * 4 + 9))
    assert SymTensor.zero().frobenius_norm() == 0.0
    assert np.linalg.norm(sym_coords(t)) == pytest.approx(t.frobenius_norm())


def test_stress_examples():
    d = shear(1 / math.sqrt(2))  # |d| = 1
    assert hb_stress(SymTensor.zero(), FluidParams(2, 1, 2, 1e-12)).frobenius_norm() == 0.0
    s = hb_stress(d, FluidParams(2.0, 1.0, 2.0, 1e-12))
    assert s.frobenius_norm() == pytest.approx(3.0, rel=1e-10)
    assert s.entries[1] > 0 and s.entries[0] == 0.0
    s = hb_stress(d, FluidParams(1.0, 0.0, 1.5, 1e-12))
    assert s.frobenius_norm() == pytest.approx(1.0, rel=1e-10)


def test_stress_rejects_trace():
    with pytest.raises(IncompressibilityError):
        hb_stress(SymTensor(2, (1.0, 0.0, 0.0)), FluidParams(1, 0, 2))


def test_effective_viscosity_examples():
    assert effective_viscosity(0.0, FluidParams(1, 0, 2, 1e-3)) == pytest.approx(1.0)
    assert effective_viscosity(0.0, FluidParams(1, 1, 2, 1e-3)) == pytest.approx(1001.0)
    assert effective_viscosity(2.0, FluidParams(1, 1, 2, 1e-12)) == pytest.approx(1.5)
    eta = effective_viscosity(np.array([0.0, 1.0, 1e6]), FluidParams(2, 0.5, 1.6, 1e-4))
    assert np.all(np.isfinite(eta)) and np.all(eta > 0)


def test_params_window():
    for bad in (dict(mu=0, g=0, p=2), dict(mu=1, g=-1, p=2), dict(mu=1, g=0, p=1.2),
                dict(mu=1, g=0, p=2.1), dict(mu=1, g=0, p=2, eps=0)):
        with pytest.raises(ValueError):
            FluidParams(**bad)
    with pytest.raises(ValueError, match=r"\[1\.5, 2\]"):
        FluidParams(1, 0, 1.2)


def test_gap_examples():
    x = SymTensor(2, (1.0, 0.0, 0.0))
    assert monotonicity_gap(x, SymTensor.zero(), 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert monotonicity_gap(x, -x, 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        monotonicity_gap(SymTensor.zero(), SymTensor.zero(), 2.0, 1.0)


def test_gap_certificate_sampled():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100_000, 3)) * 10 ** rng.uniform(-3, 3, (100_000, 1))
    y = rng.standard_normal((100_000, 3)) * 10 ** rng.uniform(-3, 3, (100_000, 1))
    for p in (1.5, 1.75, 2.0):
        g = monotonicity_gap(x, y, p, p - 1)
        scale = (1 + np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)) ** 2
        assert np.min(g / scale) >= -1e-10


def test_gap_finds_bad_constant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 3))
    y = rng.standard_normal((1000, 3))
    assert np.min(monotonicity_gap(x, y, 1.5, 2.0)) < 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
       st.floats(1.5, 2.0), st.floats(0.0, 2.0))
def test_stress_monotone_and_odd(a, b, c, d, p, g):
    pr = FluidParams(1.3, g, p, 1e-3)
    A, B = SymTensor(2, (a, b, -a)), SymTensor(2, (c, d, -c))
    sa, sb = hb_stress(A, pr), hb_stress(B, pr)
    assert (sa - sb).dot(A - B) >= -1e-12 * (1 + sa.frobenius_norm() + sb.frobenius_norm()) ** 2
    assert np.allclose(hb_stress(-A, pr).entries, (-sa).entries, rtol=0, atol=0)


def test_array_and_potential_consistent():
    pr = FluidParams(1.7, 0.3, 1.6, 1e-2)
    rng = np.random.default_rng(2)
    s = 10 ** rng.uniform(-4, 2, 50)
    # potential is an antiderivative of eta(s) s
    h = 1e-6 * s
    dpsi = (potential_array(s + h, pr) - potential_array(s - h, pr)) / (2 * h)
    assert np.allclose(dpsi, effective_viscosity(s, pr) * s, rtol=1e-6)
    assert potential_array(np.array([0.0]), pr)[0] == 0.0
    D = np.zeros((1, 2, 2))
    D[0, 0, 1] = D[0, 1, 0] = 0.5
    t = hb_stress(SymTensor.from_matrix(D[0]), pr)
    assert np.allclose(hb_stress_array(D, pr)[0], t.matrix())


def test_shear_law_reduction():
    pr = FluidParams(2.0, 0.4, 1.8, 1e-14)
    mu1, g1 = shear_law_1d(pr)
    gamma = 0.7
    sxy = hb_stress(shear(gamma / 2), pr).entries[1]
    assert sxy == pytest.approx(mu1 * gamma ** (pr.p - 1) + g1, rel=1e-10)
