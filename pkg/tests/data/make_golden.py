"""Regenerate the certified Bingham channel profile used by the tests.

Independent of ``hbflow.oracle``: the shear rate is integrated with a
cumulative trapezoid rule on a fine grid and the interface stress is found
by bisection on the top-wall velocity.  Run from the repository root:

    python3 tests/data/make_golden.py
"""
import math
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

MU, G, P, F = 1.0, 0.1, 2.0, 1.0
H1, H2 = 0.5, 0.5
N_FINE = 400_001
N_OUT = 401
HERE = Path(__file__).parent


def shear_rate(tau):
    # simple shear u = (u(y), 0): |D| = |u'|/sqrt(2), so tau = mu 2^(-p/2)|u'|^(p-1) + g/sqrt(2)
    mu1 = MU * 2.0 ** (-P / 2)
    g1 = G / math.sqrt(2.0)
    return np.sign(tau) * (np.maximum(np.abs(tau) - g1, 0.0) / mu1) ** (1.0 / (P - 1.0))


def profile(tau_c, y):
    return cumulative_trapezoid(shear_rate(tau_c - F * (y - H1)), y, initial=0.0)


def bisect(fn, a, b, tol=1e-15):
    fa = fn(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = fn(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
        if b - a < tol:
            break
    return 0.5 * (a + b)


def main():
    H = H1 + H2
    y = np.linspace(0.0, H, N_FINE)
    tau_c = bisect(lambda t: profile(t, y)[-1], -F * H1, F * H2)
    u = profile(tau_c, y)
    g1 = G / math.sqrt(2.0)
    tau = lambda s: tau_c - F * (s - H1)  # noqa: E731
    lo = bisect(lambda s: tau(s) - g1, 0.0, H1)
    hi = bisect(lambda s: -tau(s) - g1, H1, H)
    # rigid iff some constant stress shift keeps |tau| <= g everywhere: f H / 2 <= g
    thr = bisect(lambda f: (f * H / 2 - g1), 0.0, 10.0)
    yo = np.linspace(0.0, H, N_OUT)
    uo = np.interp(yo, y, u)
    with open(HERE / "bingham_golden.csv", "w") as fh:
        fh.write("y,u\n")
        for a, b in zip(yo, uo):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    with open(HERE / "bingham_golden.meta", "w") as fh:
        for k, v in [("mu", MU), ("g", G), ("p", P), ("f", F), ("h1", H1), ("h2", H2),
                     ("tau_c", tau_c), ("plug_lo", lo), ("plug_hi", hi), ("u_max", float(u.max())),
                     ("yield_threshold", thr), ("fine_points", N_FINE)]:
            fh.write(f"{k} = {float(v)!r}\n")


if __name__ == "__main__":
    main()
