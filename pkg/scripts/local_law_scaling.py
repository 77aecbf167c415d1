"""Local-law error scaling for a Wigner matrix along an eta ladder.

    python3 scripts/local_law_scaling.py --n 1000 --seeds 20 --threads 4
"""

import argparse
from pathlib import Path

from dysonlab import io
from dysonlab.ensembles import EnsembleSpec
from dysonlab.locallaw import ERROR_KINDS, scaling_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--symmetry", default="real_symmetric", choices=["real_symmetric", "complex_hermitian"])
    ap.add_argument("--etas", type=float, nargs="+", default=[0.5, 0.2, 0.1, 0.05, 0.02, 0.01])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--E", type=float, default=0.0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/local_law"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    study = scaling_study(EnsembleSpec(args.n, args.symmetry), [args.n], args.etas,
                          list(range(args.seeds)), args.E, threads=args.threads)
    cols = ["n", "eta", "seed", *ERROR_KINDS]
    io.write_csv(args.out / "scaling.csv", cols, [[r[c] for c in cols] for r in study.records])
    x = [n * eta for n, eta in study.axis]
    io.write_line_svg(args.out / "scaling.svg", {k: (x, study.medians[k]) for k in ERROR_KINDS},
                      "n*eta", "median error", loglog=True)
    for kind, (slope, half) in study.slopes.items():
        print(f"{kind:10s} slope {slope:+.3f} +- {half:.3f}")


if __name__ == "__main__":
    main()
