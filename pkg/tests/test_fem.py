import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import HETERO, NEWTON
from hbflow.fem import (
    AnalyticField,
    MixedField,
    MixedSpace,
    assemble_convection,
    assemble_divergence,
    assemble_system,
    assemble_viscous,
    collapsed_gauss_rule,
    interface_jump,
    norms,
    p2_basis,
    rate_of_deformation,
    trilinear_identity_residual,
    trilinear_identity_sides,
    yield_functional,
)
from hbflow.mesh import generate_channel_mesh
from hbflow.tensor import FluidParams, effective_viscosity
from hbflow.verify import independent_viscous_form, trilinear_triples

REF_PTS = [(1 / 3, 1 / 3), (0.1, 0.2), (0.7, 0.05)]


@pytest.mark.parametrize("fn, expected", [
    (lambda x, y: (y, 0 * x), [[0, 0.5], [0.5, 0]]),
    (lambda x, y: (x, -y), [[1, 0], [0, -1]]),
    (lambda x, y: (-y, x), [[0, 0], [0, 0]]),
])
def test_rate_of_deformation_examples(free_space4, fn, expected):
    u = free_space4.interpolate(fn)
    for e in (0, 5, free_space4.n_elements - 1):
        for ref in REF_PTS:
            D = rate_of_deformation(u, e, ref)
            assert np.allclose(D.matrix(), expected, atol=1e-12)


def test_rate_trace_is_divergence(free_space4):
    u = free_space4.interpolate(lambda x, y: (x**2 + y, x * y))
    D = rate_of_deformation(u, 3, (0.2, 0.3))
    xy = free_space4.mesh.nodes[free_space4.mesh.triangles[3]]
    x, y = xy[0] + 0.2 * (xy[1] - xy[0]) + 0.3 * (xy[2] - xy[0])
    assert D.trace() == pytest.approx(2 * x + x, abs=1e-12)


def test_viscous_symmetric_and_newtonian(space8, rng):
    A = assemble_viscous(space8, space8.zero_field(), NEWTON)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    # action on the shear field: int mu D(u):D(v) with D(u) = [[0,1/2],[1/2,0]]
    fs = MixedSpace(generate_channel_mesh(4, 4, closure="box"), dirichlet=False)
    A = assemble_viscous(fs, fs.zero_field(), NEWTON)
    u = fs.interpolate(lambda x, y: (y, 0 * x))
    v = fs.interpolate(lambda x, y: (x**2, x * y))  # D(v)_xy = y/2
    mu = {1: 1.0, 2: 4.0}
    # int mu * 2 * (1/2)(y/2) = int mu y / 2 over each fluid
    exact = mu[1] * 0.5 * 0.125 + mu[2] * 0.5 * 0.375
    assert v.velocity @ (A @ u.velocity) == pytest.approx(exact, rel=1e-13)


def test_viscous_quadratic_form_independent(space8, rng):
    state = space8.random_field(rng, 0.3)
    A = assemble_viscous(space8, state, HETERO)
    v = space8.random_field(rng).velocity
    # per-element, per-point evaluation through SymTensor and the scalar viscosity
    pts, wts = space8.quad_points, space8.quad_weights
    _, dref = p2_basis(pts)
    total = 0.0
    for e in range(space8.n_elements):
        pr = HETERO[int(space8.tags[e])]
        J = space8.jac[e]
        Jinv = np.linalg.inv(J)
        loc = v[space8.v_dofs[e]].reshape(6, 2)
        for q in range(len(wts)):
            Ds = rate_of_deformation(state, e, pts[q])
            eta = effective_viscosity(Ds.frobenius_norm(), pr)
            G = loc.T @ (dref[q] @ Jinv)
            Dv = 0.5 * (G + G.T)
            total += eta * np.sum(Dv * Dv) * wts[q] * abs(np.linalg.det(J))
    assert v @ (A @ v) == pytest.approx(total, rel=1e-10)


def test_viscous_exact_at_p2(space8, rng):
    pr = {t: FluidParams(m, 0.0, 2.0) for t, m in ((1, 1.3), (2, 2.9))}
    A = assemble_viscous(space8, space8.zero_field(), pr)
    v = space8.random_field(rng).velocity
    assert v @ (A @ v) == pytest.approx(independent_viscous_form(space8, v, {1: 1.3, 2: 2.9}), rel=1e-11)


def test_spd_on_constrained_space(space8, rng):
    A = assemble_viscous(space8, space8.random_field(rng), HETERO)
    Af = A[space8.free][:, space8.free].toarray()
    assert np.linalg.eigvalsh(Af).min() > 0


def test_convection_examples(free_space4):
    assert assemble_convection(free_space4, free_space4.zero_field()).nnz == 0 or \
        abs(assemble_convection(free_space4, free_space4.zero_field())).max() == 0
    w = free_space4.interpolate(lambda x, y: (1.0 + 0 * x, 0 * x))
    u = free_space4.interpolate(lambda x, y: (x, 0 * x))
    v = free_space4.interpolate(lambda x, y: (1.0 + 0 * x, 0 * x))
    C = assemble_convection(free_space4, w)
    assert v.velocity @ (C @ u.velocity) == pytest.approx(1.0, rel=1e-13)
    # (w . grad u) . v with w = (y, 0), u = (x^2, 0), v = (1, 0): int 2 x y = 1/2
    w = free_space4.interpolate(lambda x, y: (y, 0 * x))
    u = free_space4.interpolate(lambda x, y: (x**2, 0 * x))
    assert v.velocity @ (assemble_convection(free_space4, w) @ u.velocity) == pytest.approx(0.5, rel=1e-13)


def test_convection_skew_for_divergence_free_w():
    space = MixedSpace(generate_channel_mesh(16, 16))
    psi_y = lambda x, y: np.sin(2 * np.pi * x) * 2 * y * (1 - y) * (1 - 2 * y)  # noqa: E731
    psi_x = lambda x, y: 2 * np.pi * np.cos(2 * np.pi * x) * (y * (1 - y)) ** 2  # noqa: E731
    w = space.interpolate(lambda x, y: (psi_y(x, y), -psi_x(x, y)), constrain=True)
    C = assemble_convection(space, w)
    rng = np.random.default_rng(5)
    u = space.interpolate(lambda x, y: (np.cos(2 * np.pi * x) * y * (1 - y), np.sin(2 * np.pi * x) * y * (1 - y)))
    S = u.velocity @ (C @ u.velocity)
    scale = abs(u.velocity) @ (abs(C) @ abs(u.velocity))
    assert abs(S) <= 1e-4 * scale
    # not skew for a generic field
    z = space.random_field(rng)
    assert abs(z.velocity @ (C @ z.velocity)) > 1e-8


def test_divergence_examples(free_space4):
    B = assemble_divergence(free_space4)
    u = free_space4.interpolate(lambda x, y: (x, -y))
    assert np.abs(B @ u.velocity).max() <= 1e-14
    u = free_space4.interpolate(lambda x, y: (0 * x + 2.0, 0 * x - 3.0))
    assert np.abs(B @ u.velocity).max() <= 1e-14
    u = free_space4.interpolate(lambda x, y: (x, 0 * x))
    # row k equals int q_k, computed independently on each element
    expect = np.zeros(free_space4.n_pdof)
    for e in range(free_space4.n_elements):
        area = 0.5 * abs(free_space4.det[e])
        expect[free_space4.p_cells[e]] += area / 3
    assert np.allclose(B @ u.velocity, expect, atol=1e-14)


def test_pressure_duplicated_on_interface(space8):
    mesh = space8.mesh
    n_vertices = len(np.unique(mesh.rep))
    n_iface = len(np.unique(mesh.rep[mesh.interface_edges.ravel()]))
    assert space8.n_pdof == n_vertices + n_iface


def test_velocity_continuous_across_interface(space8, rng):
    u = space8.random_field(rng)
    assert interface_jump(u) <= 1e-14


def test_yield_functional_examples(free_space4):
    pr = {1: FluidParams(1, 1.0, 2), 2: FluidParams(1, 1.0, 2)}
    assert yield_functional(free_space4.zero_field(), pr) == 0.0
    u = free_space4.interpolate(lambda x, y: (y, 0 * x))
    assert yield_functional(u, pr) == pytest.approx(1 / math.sqrt(2), rel=1e-13)
    assert yield_functional(u * 2.0, pr) == pytest.approx(2 * yield_functional(u, pr), rel=1e-14)


def test_yield_functional_convex(space8, rng):
    for _ in range(20):
        a, b = space8.random_field(rng), space8.random_field(rng)
        mid = (a + b) * 0.5
        assert yield_functional(mid, HETERO) <= 0.5 * (yield_functional(a, HETERO) + yield_functional(b, HETERO)) + 1e-14


def test_norms_examples(free_space4):
    n = norms(free_space4.zero_field())
    assert n.v_norm == n.l2 == n.l6 == 0.0
    c = free_space4.interpolate(lambda x, y: (0 * x + 3.0, 0 * x + 4.0))
    assert norms(c).l2 == pytest.approx(5.0, rel=1e-13)
    assert norms(c).l6 == pytest.approx(5.0, rel=1e-13)
    u = free_space4.interpolate(lambda x, y: (y, 0 * x))
    n = norms(u)
    assert n.w1p[1] ** 2 + n.w1p[2] ** 2 == pytest.approx(4 / 3, rel=1e-13)
    assert n.w1p[1] ** 2 == pytest.approx(1 / 24 + 0.5, rel=1e-13)
    assert n.v_norm == pytest.approx(n.w1p[1] + n.w1p[2])


def test_collapsed_rule_exact():
    pts, wts = collapsed_gauss_rule(10)
    for i in range(6):
        for j in range(6 - i):
            exact = math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
            assert np.sum(wts * pts[:, 0] ** i * pts[:, 1] ** j) == pytest.approx(exact, rel=1e-13)


def test_trilinear_identity_examples():
    mesh = generate_channel_mesh(8, 8)
    zero = AnalyticField.from_sympy("0", "0")
    v2 = AnalyticField.from_sympy("y", "x")
    v3 = AnalyticField.from_sympy("1", "y**2")
    assert trilinear_identity_residual(zero, v2, v3, mesh, 1) == 0.0
    # stream function vanishing to second order on y = 0, 1/2 and 1: v1 = 0 on all of ∂Ω_i
    psi = "sin(2*pi*x)*y**2*(1-y)**2*(y-1/2)**2"
    import sympy
    x, y = sympy.symbols("x y")
    s = sympy.sympify(psi)
    v1 = AnalyticField.from_sympy(sympy.diff(s, y), -sympy.diff(s, x))
    for tag in (1, 2):
        lhs, rhs = trilinear_identity_sides(v1, v2, v3, mesh, tag)
        assert abs(rhs) <= 1e-15
        assert abs(lhs) <= 1e-10
    for v1, v2, v3 in trilinear_triples():
        for tag in (1, 2):
            lhs, rhs = trilinear_identity_sides(v1, v2, v3, mesh, tag)
            assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))
        assert abs(rhs) > 1e-6  # the interface term is genuinely exercised


def test_assembled_system_structure(space8, rng):
    state = space8.random_field(rng, 0.2)
    w = space8.random_field(rng, 0.2)
    sysm = assemble_system(space8, state, HETERO, {1: (1.0, 0.0), 2: (1.0, 0.0)}, w=w)
    M = sysm.matrix
    nv = space8.n_vdof
    Bt = M[:nv, nv:]
    B = M[nv:, :nv]
    assert abs(Bt - B.T).max() == 0.0
    mask = space8.dirichlet_mask
    Kd = M[:nv, :nv].tocsr()
    rows = np.flatnonzero(mask)
    assert np.all(Kd[rows][:, rows].toarray() == np.eye(len(rows)))
    assert abs(Kd[rows][:, ~mask]).max() == 0 and abs(Kd[~mask][:, rows]).max() == 0
    assert abs(Bt[rows]).max() == 0
    assert np.all(sysm.rhs[rows] == 0)
    assert np.array_equal(sysm.w, w.velocity)


def test_assembled_system_solves_newtonian(space8):
    from hbflow.inner import solve_inner
    forces = {1: (1.0, 0.0), 2: (1.0, 0.0)}
    sysm = assemble_system(space8, space8.zero_field(), NEWTON, forces)
    # pin one pressure dof to fix the gauge
    M = sysm.matrix.tolil()
    k = space8.n_vdof
    M[k, :] = 0
    M[k, k] = 1
    x = sp.linalg.spsolve(M.tocsc(), np.where(np.arange(len(sysm.rhs)) == k, 0.0, sysm.rhs))
    u, _ = sysm.split(x)
    ref, _ = solve_inner(None, space8, NEWTON, forces)
    assert np.allclose(u, ref.velocity, atol=1e-12)


def test_assembly_bit_identical_across_threads(monkeypatch, rng):
    space = MixedSpace(generate_channel_mesh(40, 40))
    state = space.random_field(rng)
    monkeypatch.setenv("HB_THREADS", "1")
    a = assemble_viscous(space, state, HETERO)
    monkeypatch.setenv("HB_THREADS", "4")
    b = assemble_viscous(space, state, HETERO)
    assert np.array_equal(a.data, b.data) and np.array_equal(a.indices, b.indices)


def test_field_validation(space8):
    with pytest.raises(ValueError):
        MixedField(space8, np.ones(space8.n_vdof), np.zeros(space8.n_pdof))
    with pytest.raises(ValueError):
        MixedField(space8, np.zeros(3), np.zeros(space8.n_pdof))
    bad = np.zeros(space8.n_vdof)
    bad[space8.free.nonzero()[0][0]] = np.nan
    with pytest.raises(ValueError):
        MixedField(space8, bad, np.zeros(space8.n_pdof))
