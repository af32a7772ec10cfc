"""Command line front end: ``hb solve | verify | oracle | refine``.

Exit codes: 0 success, 1 input error, 2 non-convergence, 3 property failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import NotAChannel, channel_problem, compare_plug, nodal_profile, relative_l2_error
from .config import ConfigError, RunConfig, load_config
from .fem import MixedSpace, norms
from .io import write_csv, write_summary, write_vtk
from .mesh import MeshError
from .oracle import OracleError, solve_channel, write_profile_csv, yield_threshold
from .outer import estimate_R, inequality_battery, solve_transmission

EXIT_OK, EXIT_INPUT, EXIT_NONCONV, EXIT_PROPERTY = 0, 1, 2, 3

log = logging.getLogger("hbflow")


def _out_dir(cfg: RunConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


def _plugs(intervals) -> str:
    return "; ".join(f"{float(a)!r}..{float(b)!r}" for a, b in intervals)


def _inner_rows(irep):
    rows, k = [], 0
    for stage, (eps, n) in enumerate(zip(irep.eps_used, irep.stage_iterations)):
        for j in range(n + 1):
            rows.append((stage, j, eps, irep.residuals[k], irep.energies[k]))
            k += 1
    return rows


def solve_case(cfg: RunConfig, refine: int = 1):
    """Mesh, solve and oracle data for one configuration (no file output)."""
    space = MixedSpace(cfg.mesh.build(refine))
    R = estimate_R(cfg.params, cfg.forces, space)
    u, rep = solve_transmission(space, cfg.params, cfg.forces, cfg.inner, cfg.outer, R=R)
    oracle = None
    try:
        prob = channel_problem(space, cfg.params, cfg.forces)
    except NotAChannel as exc:
        log.info("no 1-D oracle for this geometry: %s", exc)
    else:
        oracle = solve_channel(prob, cfg.samples)
    return space, u, rep, oracle


def run_solve(cfg: RunConfig, echo=print) -> int:
    t0 = time.perf_counter()
    space, u, rep, oracle = solve_case(cfg)
    out = _out_dir(cfg)
    irep = rep.inner
    write_vtk(out / "solution.vtk", u, f"hbflow solution, {space.n_elements} elements")
    write_csv(out / "convergence.csv",
              ["outer", "l6_diff", "v_norm", "R", "in_ball", "relaxation", "inner_iterations"],
              [(k + 1, d, v, rep.R, int(v <= rep.R), a, n) for k, (d, v, a, n) in
               enumerate(zip(rep.l6_diffs, rep.v_norms, rep.relaxation, rep.inner_iterations))])
    write_csv(out / "inner_residuals.csv", ["stage", "iteration", "eps", "residual", "energy"], _inner_rows(irep))

    nrm = norms(u, cfg.params)
    battery = inequality_battery(u, cfg.params, cfg.forces, seed=cfg.seed)
    summary = {
        "converged": "yes" if rep.converged else "no",
        "outer_iterations": rep.iterations,
        "inner_iterations_last": irep.iterations,
        "final_l6_difference": rep.l6_diffs[-1],
        "l6_scale": rep.scale,
        "final_inner_residual": irep.final_residual,
        "eps_final": irep.eps_used[-1],
        "v_norm": nrm.v_norm,
        "w1p_norm_fluid1": nrm.w1p[1],
        "w1p_norm_fluid2": nrm.w1p[2],
        "l2_norm": nrm.l2,
        "l6_norm": nrm.l6,
        "max_nodal_speed": float(np.max(np.linalg.norm(u.nodal_velocity(), axis=1))),
        "divergence_norm": irep.divergence_norm,
        "interface_jump": irep.interface_defect,
        "ball_radius_R": rep.R,
        "max_iterate_v_norm": max(rep.v_norms),
        "ball_check": "pass" if rep.in_ball else "FAIL",
        "energy_estimate": "pass" if irep.energy_check.holds else "FAIL",
        "battery_min_slack": float(np.min(battery.slacks)),
        "battery_min_relative_slack": battery.min_relative,
        "battery_check": "pass" if battery.passed else "FAIL",
    }
    if oracle is not None:
        err = relative_l2_error(u, oracle)
        summary["oracle_relative_l2_error"] = err
        summary["oracle_interface_stress"] = oracle.tau_c
        summary["oracle_rigid"] = "yes" if oracle.rigid else "no"
        summary["oracle_plugs"] = _plugs(oracle.plugs) or "none"
        if oracle.plugs:
            pc = compare_plug(u, oracle.plugs)
            summary["fem_plug_band"] = _plugs([pc.band]) if pc.band else "none"
            summary["plug_overlap"] = "pass" if pc.overlaps else "FAIL"
        write_profile_csv(out / "oracle_profile.csv", oracle)
        yf, uf = nodal_profile(u)
        write_csv(out / "profile.csv", ["y", "u_fem", "u_oracle"], zip(yf, uf, oracle(yf)))
    write_summary(out / "summary.txt", summary)
    if cfg.figures:
        from . import plots

        plots.plot_convergence(out / "convergence.png", rep.l6_diffs, irep.residuals,
                               cfg.outer.tol_fixed_point * rep.scale, cfg.inner.tol_rel)
        plots.plot_speed(out / "speed.png", u)
        if oracle is not None:
            yf, uf = nodal_profile(u)
            plots.plot_profile(out / "profile.png", yf, uf, oracle.y, oracle.u, oracle.plugs)
    for k, v in summary.items():
        echo(f"{k} = {v}")
    echo(f"wrote {out} in {time.perf_counter() - t0:.1f}s")
    if not rep.converged:
        echo("error: the fixed-point iteration did not converge", file=sys.stderr)
        return EXIT_NONCONV
    if not rep.in_ball:
        echo("error: an outer iterate left the a priori ball", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def run_verify(seed: int = 0, self_test: bool = False, echo=print) -> int:
    from .verify import run_suite

    checks = run_suite(seed, self_test=self_test, echo=echo)
    failed = [c for c in checks if not c.passed]
    echo(f"{len(checks) - len(failed)}/{len(checks)} properties passed")
    return EXIT_PROPERTY if failed else EXIT_OK


def run_oracle(cfg: RunConfig, echo=print) -> int:
    space = MixedSpace(cfg.mesh.build())
    try:
        prob = channel_problem(space, cfg.params, cfg.forces)
    except NotAChannel as exc:
        raise ConfigError(f"oracle needs a channel configuration: {exc}") from None
    sol = solve_channel(prob, cfg.samples)
    thr = yield_threshold(prob)
    out = _out_dir(cfg)
    write_profile_csv(out / "oracle_profile.csv", sol)
    write_summary(out / "oracle_summary.txt", {
        "h1": prob.h1, "h2": prob.h2, "force": prob.f,
        "interface_stress": sol.tau_c, "rigid": "yes" if sol.rigid else "no",
        "yield_threshold": thr, "u_max": sol.u_max, "flow_rate": sol.flow_rate,
        "plugs": _plugs(sol.plugs) or "none",
    })
    if cfg.figures:
        from . import plots

        plots.plot_profile(out / "oracle_profile.png", sol.y, sol.u, plugs=sol.plugs)
    echo(f"interface stress = {sol.tau_c!r}")
    echo(f"yield threshold = {thr!r}")
    echo(f"plugs = {_plugs(sol.plugs) or 'none'}")
    return EXIT_OK


def run_refine(cfg: RunConfig, levels: int, echo=print) -> int:
    if levels < 2:
        raise ConfigError(f"refinement needs at least 2 levels, got {levels}")
    if not cfg.mesh.is_channel:
        raise ConfigError("refinement needs the periodic channel generator")
    out = _out_dir(cfg)
    rows = []
    status = EXIT_OK
    for lev in range(levels):
        space, u, rep, oracle = solve_case(cfg, refine=2**lev)
        if oracle is None:
            raise ConfigError("refinement needs the same force along x in both fluids")
        h = cfg.mesh.length / (cfg.mesh.nx * 2**lev)
        err = relative_l2_error(u, oracle)
        rows.append((lev, h, err, norms(u, cfg.params).v_norm, rep.iterations))
        echo(f"level {lev}: h = {h:.5g}, L2 error {err:.3e}, outer iterations {rep.iterations}")
        if not rep.converged:
            status = EXIT_NONCONV
    write_csv(out / "refinement.csv", ["level", "h", "L2_error_vs_oracle", "V_norm", "outer_iters"], rows)
    errs = [r[2] for r in rows]
    if cfg.figures:
        from . import plots

        plots.plot_refinement(out / "refinement.png", [r[1] for r in rows], errs)
    if status == EXIT_OK and any(b > a for a, b in zip(errs, errs[1:])):
        echo("error: L2 error increased under refinement", file=sys.stderr)
        status = EXIT_PROPERTY
    return status


def _echo(msg="", file=None):
    print(msg, file=file or sys.stdout, flush=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hb", description="Two-fluid Herschel-Bulkley transmission solver")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve the problem described by a config file")
    s.add_argument("config")
    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--self-test", action="store_true",
                   help="also run a deliberately wrong certificate that must be reported as failing")
    o = sub.add_parser("oracle", help="1-D layered channel profile and yield threshold")
    o.add_argument("config")
    r = sub.add_parser("refine", help="mesh refinement study against the 1-D profile")
    r.add_argument("config")
    r.add_argument("--levels", type=int, default=3)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("HB_THREADS")
    if threads is not None and (not threads.isdigit() or int(threads) < 1):
        _echo(f"error: HB_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.command == "verify":
            return run_verify(args.seed, args.self_test, echo=_echo)
        cfg = load_config(args.config)
        if args.command == "solve":
            return run_solve(cfg, echo=_echo)
        if args.command == "oracle":
            return run_oracle(cfg, echo=_echo)
        return run_refine(cfg, args.levels, echo=_echo)
    except (ConfigError, MeshError, OracleError) as exc:
        _echo(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        _echo(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
