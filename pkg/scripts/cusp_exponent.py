"""Locate the cusp of the four-block family and fit density exponents there.

Bisects on the off-diagonal value for the point where the inner gap closes,
then fits log-log slopes on both sides of the minimum. Also fits the printed
0.1 matrix for comparison.

    python3 scripts/cusp_exponent.py
"""

import argparse

import numpy as np

from dysonlab.vde import VarianceMatrix, edge_exponent, interior_minimum, vde_density_function

BRACKET = (0.3, 0.5)


def has_gap(a: float) -> bool:
    # the bounded minimizer may land beside a very narrow gap, but past the
    # closing the minimum jumps to ~1e-3, so a loose threshold is sharp enough
    _, rho = interior_minimum(VarianceMatrix.four_block(a), BRACKET)
    return rho < 1e-4


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=0.09)
    ap.add_argument("--hi", type=float, default=0.12)
    ap.add_argument("--iters", type=int, default=30)
    args = ap.parse_args()

    lo, hi = args.lo, args.hi
    if not has_gap(lo) or has_gap(hi):
        raise SystemExit("bracket does not straddle the gap closing")
    for _ in range(args.iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if has_gap(mid) else (lo, mid)
    a_c = hi
    tau0, _ = interior_minimum(VarianceMatrix.four_block(a_c), BRACKET)
    print(f"critical value a_c = {a_c:.6f}, cusp location tau0 = {tau0:.6f}")

    for a in (a_c, 0.1):
        S = VarianceMatrix.four_block(a)
        t0, rho_min = interior_minimum(S, BRACKET)
        f = vde_density_function(S)
        for side in ("left", "right"):
            fit = edge_exponent(f, t0, side)
            print(f"a={a:.6f} tau0={t0:.6f} min rho={rho_min:.2e} {side:5s} slope={fit.slope:.4f} ({fit.kind})")


if __name__ == "__main__":
    main()
