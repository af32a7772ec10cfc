"""Acceptance criteria 1-8, one PASS/FAIL line each (shown in the pytest
terminal summary, or printed when run as a script)."""
import functools
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from hbflow import verify
from hbflow.analysis import channel_problem, compare_plug, relative_l2_error
from hbflow.cli import solve_case
from hbflow.config import parse_config
from hbflow.fem import MixedSpace
from hbflow.mesh import generate_channel_mesh
from hbflow.oracle import yield_threshold
from hbflow.outer import continuity_diagnostic, inequality_battery

DATA = Path(__file__).parent / "data"


def report(k: int, title: str, ok: bool, seconds: float, limit: float, detail: str) -> None:
    ok = ok and seconds < limit
    line = f"criterion {k} [{'PASS' if ok else 'FAIL'}] {title}: {detail} ({seconds:.1f}s, limit {limit:g}s)"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def channel_cfg(n, fluid1, fluid2, force=1.0, extra=""):
    text = f"""
[mesh]
nx = {n}
ny = {n}
[fluid1]
mu = {fluid1[0]}
g = {fluid1[1]}
p = {fluid1[2]}
force = {force!r}, 0.0
[fluid2]
mu = {fluid2[0]}
g = {fluid2[1]}
p = {fluid2[2]}
force = {force!r}, 0.0
{extra}
[output]
figures = no
"""
    return parse_config(text)


NEWTON = ((1.0, 0.0, 2.0), (4.0, 0.0, 2.0))
BINGHAM = ((1.0, 0.1, 2.0), (1.0, 0.1, 2.0))
HETERO = ((1.0, 0.05, 1.7), (3.0, 0.15, 2.0))


@functools.lru_cache(maxsize=None)
def timed_solve(case, n, force=1.0):
    t = time.perf_counter()
    cfg = channel_cfg(n, *case, force=force)
    space, u, rep, oracle = solve_case(cfg)
    return cfg, space, u, rep, oracle, time.perf_counter() - t


def golden():
    data = np.loadtxt(DATA / "bingham_golden.csv", delimiter=",", skiprows=1)
    meta = {}
    for line in (DATA / "bingham_golden.meta").read_text().splitlines():
        k, v = line.split(" = ")
        meta[k] = float(v)
    return data[:, 0], data[:, 1], meta


def test_criterion_1_monotonicity_certificate():
    t = time.perf_counter()
    rng = np.random.default_rng(20240)
    checks = [verify.check_monotonicity_certificate(rng, p, n=100_000) for p in (1.5, 1.75, 2.0)]
    detail = "; ".join(f"p={p}: {c.detail.split(', best')[0]}" for p, c in zip((1.5, 1.75, 2.0), checks))
    report(1, "monotonicity certificate, c = p - 1", all(c.passed for c in checks),
           time.perf_counter() - t, 10, detail)


def test_criterion_2_trilinear_identity():
    t = time.perf_counter()
    c = verify.check_trilinear_identity(generate_channel_mesh(32, 32), tol=1e-8)
    report(2, "trilinear identity on 5 triples", c.passed, time.perf_counter() - t, 5, c.detail)


def test_criterion_3_operator_properties():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    space = MixedSpace(generate_channel_mesh(16, 16))
    cs = [verify.check_phi_monotone(rng, space, n=100), verify.check_boundedness(rng, space, n=100),
          verify.check_coercivity_ladder(rng, space)]
    report(3, "monotone, bounded, coercive", all(c.passed for c in cs), time.perf_counter() - t, 30,
           "; ".join(c.detail for c in cs))


def test_criterion_4_newtonian_oracle():
    cfg, space, u, rep, oracle, secs = timed_solve(NEWTON, 32)
    err = relative_l2_error(u, oracle)
    ok = err <= 0.01 and rep.converged and rep.in_ball
    report(4, "Newtonian two-layer channel 32x32", ok, secs, 60,
           f"relative L2 error {err:.2e} (<= 1e-2), max iterate V-norm {max(rep.v_norms):.4f} <= R = {rep.R:.4f}")


def test_criterion_5_bingham_golden():
    cfg, space, u, rep, oracle, secs = timed_solve(BINGHAM, 64)
    y, ug, meta = golden()
    eps = cfg.inner.eps_schedule[-1]
    err = relative_l2_error(u, lambda s: np.interp(s, y, ug))
    pc = compare_plug(u, [(meta["plug_lo"], meta["plug_hi"])], cells=2)
    ok = err <= 0.03 and pc.overlaps and eps == 1e-4 and rep.converged
    report(5, "Bingham channel 64x64 vs golden profile", ok, secs, 180,
           f"relative L2 error {err:.2e} (<= 3e-2), eps_final {eps:g}, FEM plug {pc.band[0]:.4f}..{pc.band[1]:.4f} "
           f"vs golden {pc.oracle[0]:.4f}..{pc.oracle[1]:.4f}, offsets {max(pc.offsets):.4f} <= {pc.tolerance:.4f}")


def test_criterion_6_below_yield_threshold():
    t = time.perf_counter()
    cfg = channel_cfg(32, *BINGHAM)
    thr = yield_threshold(channel_problem(MixedSpace(cfg.mesh.build()), cfg.params, cfg.forces))
    cfg, space, u, rep, oracle, _ = timed_solve(BINGHAM, 32, force=0.9 * thr)
    eps = cfg.inner.eps_schedule[-1]
    umax = float(np.max(np.linalg.norm(u.nodal_velocity(), axis=1)))
    report(6, "rigid below the yield threshold", rep.converged and oracle.rigid and umax <= 10 * eps,
           time.perf_counter() - t, 120,
           f"f = 0.9 x {thr:.6f}, max nodal |u| {umax:.2e} <= 10 eps_final = {10 * eps:g}")


def test_criterion_7_heterogeneous():
    cfg, space, u, rep, oracle, secs = timed_solve(HETERO, 32)
    t = time.perf_counter()
    battery = inequality_battery(u, cfg.params, cfg.forces, seed=0)
    cont = continuity_diagnostic(u, cfg.params, cfg.forces, cfg.inner)
    secs += time.perf_counter() - t
    conv = rep.converged and rep.iterations <= 50 and rep.l6_diffs[-1] <= 1e-7 * rep.scale
    ok = conv and battery.passed and cont.bounded
    report(7, "heterogeneous transmission run 32x32", ok, secs, 300,
           f"{rep.iterations} outer iterations, final L6 diff {rep.l6_diffs[-1]:.2e} "
           f"(<= {1e-7 * rep.scale:.2e}); battery min slack/scale {battery.min_relative:.2e} (>= -1e-6); "
           f"continuity ratios {', '.join(f'{r:.3e}' for r in cont.ratios)}, spread {cont.spread:.4f} (<= {cont.spread_limit:g})")


def refinement(case, levels):
    errs, secs = [], 0.0
    for n in levels:
        _, _, u, rep, oracle, s = timed_solve(case, n)
        errs.append(relative_l2_error(u, oracle))
        secs += s
    return np.array(errs), secs


def test_criterion_8_refinement():
    en, sn = refinement(NEWTON, (8, 16, 32))
    eb, sb = refinement(BINGHAM, (16, 32, 64))
    ratios = en[:-1] / en[1:]
    newton_ok = bool(np.all(ratios >= 2))
    bingham_ok = bool(np.all(np.diff(eb) <= 0))
    report(8, "refinement study", newton_ok and bingham_ok, sn + sb, 600,
           f"Newtonian 8/16/32 errors {', '.join(f'{e:.1e}' for e in en)}, ratios "
           f"{', '.join(f'{r:.2f}' for r in ratios)} (>= 2: {'yes' if newton_ok else 'no'}); "
           f"Bingham 16/32/64 errors {', '.join(f'{e:.2e}' for e in eb)} "
           f"(nonincreasing: {'yes' if bingham_ok else 'no'})")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
