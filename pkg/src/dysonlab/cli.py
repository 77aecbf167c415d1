"""Command-line entry point.

    dysonlab [--config FILE] [--seed S] [--threads K] [--out DIR] <command>

Commands: density, solve, stability, local-law, dbm, ensemble-check. A
config file is a JSON object holding the command parameters (see the
``*Params`` dataclasses) plus optional ``seed``, ``threads`` and
``output_dir``. Flags override the file. Exit codes: 0 ok, 2 bad config,
3 numerical failure (partial outputs plus a failed manifest), 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .dbm import (
    DbmState,
    GapSample,
    dbm_simulate,
    dbm_trajectory,
    gap_cdf_distance,
    normalized_gaps,
)
from .ensembles import EnsembleSpec, analytic_self_energy, empirical_self_energy, sample_one
from .errors import (
    BulkViolation,
    DysonLabError,
    EmptyWindow,
    InvalidCovariance,
    InvalidInput,
    NonConvergence,
    TooFewGaps,
    UnsupportedKind,
)
from .locallaw import ERROR_KINDS, scaling_study
from .mde import (
    mde_density,
    saturated_superop,
    polar_decompose,
    solve_mde,
    stability_inverse_norm_mde,
    superop_norm_and_gap,
)
from .vde import (
    HalfPlanePoint,
    VarianceMatrix,
    catalan_moment,
    saturated_f,
    sc_density,
    solve_vde,
    stability_inverse_norm,
    support_set,
)

__all__ = ["main", "RunConfig", "ConfigError", "PARAMS", "resolve_threads"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(DysonLabError, ValueError):
    pass


class NumericFailure(DysonLabError):
    """Raised by a command after it has written its partial outputs."""


# ----------------------------------------------------------------------------
# Configs
# ----------------------------------------------------------------------------


@dataclass
class DensityParams:
    variance: dict | None = None
    self_energy: dict | None = None
    grid: list = field(default_factory=lambda: [-3.0, 3.0, 601])
    eta: float = 1e-3
    components: bool = False
    support_threshold: float = 1e-2


@dataclass
class SolveParams:
    variance: dict | None = None
    self_energy: dict | None = None
    z: list = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class StabilityParams:
    variance: dict | None = None
    self_energy: dict | None = None
    grid: list = field(default_factory=lambda: [-2.5, 2.5, 101])
    eta: float = 1e-2


@dataclass
class EnsembleParams:
    n: int = 100
    symmetry: str = "real_symmetric"
    kind: str = "wigner"
    entry_law: str = "gaussian"
    variance: dict | None = None
    self_energy: dict | None = None


@dataclass
class LocalLawParams:
    ensemble: dict = field(default_factory=lambda: {"n": 1000})
    n_list: list = field(default_factory=lambda: [1000])
    eta_list: list = field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05, 0.02, 0.01])
    seeds: int = 20
    E: float = 0.0


@dataclass
class DbmParams:
    n: int = 200
    beta: int = 2
    t_end: float = 0.5
    dt: float = 5e-5
    paths: int = 20
    stride: float = 0.05
    window: list = field(default_factory=lambda: [-1.0, 1.0])
    gap_guard: float | None = None
    bins: int = 30


@dataclass
class EnsembleCheckParams:
    ensemble: dict = field(default_factory=lambda: {"n": 50})
    count: int = 200
    moments: list = field(default_factory=lambda: [2, 4, 6])


PARAMS = {
    "density": DensityParams,
    "solve": SolveParams,
    "stability": StabilityParams,
    "local-law": LocalLawParams,
    "dbm": DbmParams,
    "ensemble-check": EnsembleCheckParams,
}


@dataclass
class RunConfig:
    command: str
    params: object
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"

    def to_json(self) -> dict:
        return {"command": self.command, "seed": self.seed, "threads": self.threads,
                "output_dir": self.output_dir, **dataclasses.asdict(self.params)}

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        command = doc.pop("command", None)
        if command not in PARAMS:
            raise ConfigError(f"unknown command {command!r}")
        seed = doc.pop("seed", 0)
        threads = doc.pop("threads", 1)
        output_dir = doc.pop("output_dir", "out")
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not isinstance(threads, int) or threads < 0:
            raise ConfigError("threads must be a nonnegative integer")
        ptype = PARAMS[command]
        known = {f.name for f in dataclasses.fields(ptype)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown {command} parameters: {sorted(extra)}")
        return cls(command, ptype(**doc), seed, threads, str(output_dir))

    def echo(self) -> dict:
        """Config as echoed into manifests: everything that determines the
        outputs. Thread count and output location do not, so they are left
        out to keep manifests identical across otherwise equal runs."""
        doc = self.to_json()
        doc.pop("threads")
        doc.pop("output_dir")
        return doc


def resolve_threads(flag: int | None, config_value: int | None = None) -> int:
    """``--threads`` over the config over ``DYSONLAB_THREADS``; 0 means all cores."""
    k = flag
    if k is None:
        k = config_value
    if k is None:
        env = os.environ.get("DYSONLAB_THREADS")
        if env:
            try:
                k = int(env)
            except ValueError as exc:
                raise ConfigError(f"DYSONLAB_THREADS={env!r} is not an integer") from exc
    if k is None:
        k = 1
    if k < 0:
        raise ConfigError("threads must be nonnegative")
    return k if k > 0 else (os.cpu_count() or 1)


def _grid(spec) -> np.ndarray:
    try:
        lo, hi, count = spec
        count = int(count)
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid must be [lo, hi, count]") from exc
    if count < 1 or not hi >= lo:
        raise ConfigError("grid is empty")
    return np.linspace(float(lo), float(hi), count)


def _coefficient(p):
    """VarianceMatrix (vector equation) or SelfEnergySpec (matrix equation)."""
    if (p.variance is None) == (p.self_energy is None):
        if p.variance is None and p.self_energy is None:
            return VarianceMatrix.wigner(100)
        raise ConfigError("give exactly one of variance / self_energy")
    if p.variance is not None:
        if "wigner" in p.variance:
            return VarianceMatrix.wigner(int(p.variance["wigner"]))
        return io.variance_from_json(p.variance)
    return io.self_energy_from_json(p.self_energy)


def _ensemble(doc: dict) -> EnsembleSpec:
    try:
        p = EnsembleParams(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad ensemble block: {exc}") from exc
    var = io.variance_from_json(p.variance) if p.variance is not None else None
    se = io.self_energy_from_json(p.self_energy) if p.self_energy is not None else None
    return EnsembleSpec(p.n, p.symmetry, p.kind, var, se, p.entry_law)


def _seed_list(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, np.uint64)]


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def cmd_density(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    grid = _grid(p.grid)
    coef = _coefficient(p)
    if isinstance(coef, VarianceMatrix):
        d = sc_density(coef, grid, p.eta, components=p.components, threads=threads)
    else:
        d = mde_density(coef, None, grid, p.eta)
    io.write_density_csv(out / "density.csv", d, components=p.components)
    io.write_line_svg(out / "density.svg", {"rho": (d.grid, d.rho)}, "tau", "rho")
    if not d.valid.all():
        bad = int((~d.valid).sum())
        raise NumericFailure(f"solver failed at {bad} of {d.grid.size} grid points")
    supp = support_set(d, p.support_threshold)
    io.write_json(out / "support.json", {"threshold": p.support_threshold, "count": len(supp),
                                         "intervals": [list(iv) for iv in supp]})
    return ["density.csv", "density.svg", "support.json"]


def cmd_solve(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    try:
        z = HalfPlanePoint(float(p.z[0]), float(p.z[1]))
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad spectral parameter {p.z!r}: {exc}") from exc
    coef = _coefficient(p)
    if isinstance(coef, VarianceMatrix):
        sol = solve_vde(coef, z)
        inter = np.empty(2 * sol.m.size)
        inter[0::2], inter[1::2] = sol.m.real, sol.m.imag
        doc = {"equation": "vector", "z": {"re": z.re, "im": z.im}, "n": sol.m.size,
               "residual": sol.residual, "density": sol.density, "m": inter}
    else:
        sol = solve_mde(coef, None, z)
        doc = {"equation": "matrix", **io.solution_matrix_to_json(sol), "density": sol.density}
    io.write_json(out / "solution.json", doc)
    return ["solution.json"]


def cmd_stability(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    grid = _grid(p.grid)
    coef = _coefficient(p)
    vector = isinstance(coef, VarianceMatrix)

    def row(tau):
        z = HalfPlanePoint(tau, p.eta)
        try:
            if vector:
                sol = solve_vde(coef, z)
                F = saturated_f(coef, sol)
                return [tau, p.eta, sol.density, stability_inverse_norm(coef, sol, "l2"),
                        stability_inverse_norm(coef, sol, "sup"), F.norm, F.gap]
            sol = solve_mde(coef, None, z)
            norm, gap, _ = superop_norm_and_gap(saturated_superop(coef, polar_decompose(sol.M)))
            return [tau, p.eta, sol.density, stability_inverse_norm_mde(coef, sol.M), np.nan, norm, gap]
        except (NonConvergence, ArithmeticError):
            return [tau, p.eta] + [np.nan] * 5

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(row, grid))
    else:
        rows = [row(t) for t in grid]
    header = ["tau", "eta", "rho", "inv_norm_l2", "inv_norm_sup", "f_norm", "f_gap"]
    io.write_csv(out / "stability.csv", header, rows)
    arr = np.array(rows, dtype=float)
    io.write_line_svg(out / "stability.svg", {"inverse norm (l2)": (arr[:, 0], arr[:, 3])},
                      "tau", "norm of inverse stability operator")
    if np.isnan(arr[:, 3]).any():
        raise NumericFailure(f"stability failed at {int(np.isnan(arr[:, 3]).sum())} grid points")
    return ["stability.csv", "stability.svg"]


def cmd_local_law(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    base = _ensemble(p.ensemble)

    def spec_for(n):
        if n == base.n:
            return base
        if base.kind != "wigner":
            raise ConfigError("n_list with several sizes is only supported for the wigner kind")
        return EnsembleSpec(n, base.symmetry, base.kind, None, None, base.entry_law)

    study = scaling_study(spec_for, p.n_list, p.eta_list, _seed_list(cfg.seed, p.seeds), p.E, threads)
    header = ["n", "eta", "seed", "entrywise", "isotropic", "averaged", "d_maxnorm"]
    io.write_csv(out / "scaling.csv", header, ([r[h] for h in header] for r in study.records))
    io.write_json(out / "slopes.json", {
        "axis": [list(a) for a in study.axis],
        "slopes": {k: {"slope": s, "half_width": h} for k, (s, h) in study.slopes.items()},
        "medians": study.medians, "p90": study.p90,
    })
    x = [n * eta for n, eta in study.axis]
    io.write_line_svg(out / "scaling.svg", {k: (x, study.medians[k]) for k in ERROR_KINDS},
                      "n eta", "median error", loglog=True)
    return ["scaling.csv", "slopes.json", "scaling.svg"]


def cmd_dbm(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    if p.beta not in (1, 2):
        raise ConfigError("beta must be 1 or 2")
    symmetry = "real_symmetric" if p.beta == 1 else "complex_hermitian"
    spec = EnsembleSpec(int(p.n), symmetry)
    seeds = _seed_list(cfg.seed, p.paths)
    window = tuple(p.window)

    def path(k):
        start = DbmState(np.linalg.eigvalsh(sample_one(spec, cfg.seed, k)), 0.0, p.beta)
        if k == 0:
            traj = dbm_trajectory(start, p.t_end, p.dt, seeds[k], p.stride, gap_guard=p.gap_guard)
            return start, traj.final, traj
        return start, dbm_simulate(start, p.t_end, p.dt, seeds[k], gap_guard=p.gap_guard), None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(path, range(p.paths)))
    else:
        runs = [path(k) for k in range(p.paths)]
    traj = runs[0][2]
    io.write_csv(out / "trajectory.csv", ["t"] + [f"lambda_{i}" for i in range(spec.n)],
                 ([t, *lam] for t, lam in zip(traj.times, traj.lambdas)))
    g0 = GapSample.pool(normalized_gaps(s, None, window) for s, _, _ in runs)
    g1 = GapSample.pool(normalized_gaps(f, None, window) for _, f, _ in runs)
    edges = np.linspace(0.0, 4.0, p.bins + 1)
    h0 = np.histogram(g0.gaps, edges, density=True)[0]
    h1 = np.histogram(g1.gaps, edges, density=True)[0]
    io.write_csv(out / "gaps.csv", ["bin_lo", "bin_hi", "density_t0", "density_tend"],
                 zip(edges[:-1], edges[1:], h0, h1))
    centers = 0.5 * (edges[1:] + edges[:-1])
    io.write_line_svg(out / "gaps.svg", {"t = 0": (centers, h0), f"t = {p.t_end:g}": (centers, h1)},
                      "normalized gap", "density")
    summary = {"gaps_t0": len(g0), "gaps_tend": len(g1), "mean_t0": g0.mean, "mean_tend": g1.mean}
    summary["ks_distance"] = gap_cdf_distance(g0, g1) if min(len(g0), len(g1)) >= 200 else None
    io.write_json(out / "dbm_summary.json", summary)
    return ["trajectory.csv", "gaps.csv", "gaps.svg", "dbm_summary.json"]


def cmd_ensemble_check(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    spec = _ensemble(p.ensemble)
    count = int(p.count)
    if count < 100:
        raise ConfigError("count must be at least 100")

    def moments(k):
        H = sample_one(spec, cfg.seed, k)
        w = np.linalg.eigvalsh(H)
        return [float(np.mean(w ** int(j))) for j in p.moments]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            mom = np.array(list(pool.map(moments, range(count))))
    else:
        mom = np.array([moments(k) for k in range(count)])
    report = {"n": spec.n, "count": count, "moments": []}
    for j, col in zip(p.moments, mom.T):
        entry = {"k": int(j), "mean": float(col.mean()), "stderr": float(col.std(ddof=1) / np.sqrt(count))}
        if spec.kind in ("wigner", "generalized_wigner") and int(j) % 2 == 0 and int(j) <= 60:
            entry["catalan"] = catalan_moment(int(j) // 2)
        report["moments"].append(entry)
    checks = []
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**32 - 2,)))
    X = rng.standard_normal((spec.n, spec.n)) + 1j * rng.standard_normal((spec.n, spec.n))
    for name, R in (("identity", np.eye(spec.n)), ("random_hermitian", (X + X.conj().T) / 2)):
        est, err = empirical_self_energy(spec, R, count, cfg.seed)
        exact = analytic_self_energy(spec, R)
        z = np.abs(est - exact) / np.where(err > 0, err, np.inf)
        checks.append({"R": name, "max_abs_deviation": float(np.abs(est - exact).max()),
                       "max_z_score": float(z.max()), "median_z_score": float(np.median(z))})
    report["self_energy"] = checks
    io.write_json(out / "ensemble_check.json", report)
    return ["ensemble_check.json"]


COMMANDS = {
    "density": cmd_density,
    "solve": cmd_solve,
    "stability": cmd_stability,
    "local-law": cmd_local_law,
    "dbm": cmd_dbm,
    "ensemble-check": cmd_ensemble_check,
}


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="JSON config file")
    parser.add_argument("--seed", type=int, default=default, help="unsigned 64-bit seed")
    parser.add_argument("--threads", type=int, default=default,
                        help="worker threads (0 = all cores; env DYSONLAB_THREADS)")
    parser.add_argument("--out", type=Path, default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dysonlab", description="Dyson equation solvers and random-matrix checks")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} study")
        _global_flags(sp, suppress=True)
    return parser


def load_config(args) -> RunConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = io.read_json(args.config)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if doc.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {doc['command']!r}, not {args.command!r}")
    doc = {**doc, "command": args.command}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = str(args.out)
    try:
        return RunConfig.from_json(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = None
    cfg = None
    try:
        cfg = load_config(args)
        threads = resolve_threads(args.threads, cfg.threads if args.config is not None else None)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.command](cfg, out, threads)
        io.write_manifest(out, cfg.echo())
        return EXIT_OK
    except (ConfigError, InvalidInput, UnsupportedKind, BulkViolation, InvalidCovariance,
            EmptyWindow, TooFewGaps, KeyError) as exc:
        print(f"dysonlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"dysonlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DysonLabError, ArithmeticError) as exc:
        print(f"dysonlab: numerical failure: {exc}", file=sys.stderr)
        if out is not None and out.is_dir():
            try:
                io.write_manifest(out, cfg.echo(), status="failed", error=str(exc))
            except OSError:
                return EXIT_IO
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
