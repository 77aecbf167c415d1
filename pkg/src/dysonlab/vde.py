"""Vector Dyson equation ``-1/m = z + S m`` and its diagnostics.

The solver, the self-consistent density, the saturated self-energy
``F = |m| S |m|``, stability norms of ``1 - m^2 S`` and the exponent fits
used to classify edges and cusps of the density all live here.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize_scalar

from .errors import (
    DegenerateDenominator,
    InsufficientSignal,
    InvalidInput,
    MassDeficit,
    NegativeProfile,
    NonConvergence,
    SingularStability,
)

__all__ = [
    "HalfPlanePoint",
    "VarianceMatrix",
    "SolverOpts",
    "SolutionVector",
    "DensityCurve",
    "SaturatedF",
    "SupportSet",
    "ExponentFit",
    "as_point",
    "msc",
    "msc_array",
    "semicircle_density",
    "semicircle_curve",
    "catalan_moment",
    "solve_vde",
    "vde_residual",
    "sc_density",
    "support_set",
    "saturated_f",
    "f_norm_identity_defect",
    "stability_operator",
    "stability_operator_polar",
    "stability_inverse_norm",
    "quantiles",
    "index_of",
    "cumulative_mass",
    "stieltjes_transform",
    "edge_exponent",
    "vde_density_function",
    "interior_minimum",
    "profile_to_matrix",
    "block_profile",
]


# ----------------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HalfPlanePoint:
    """Spectral parameter ``z = re + i*im`` with ``im > 0``."""

    re: float
    im: float

    def __post_init__(self):
        if not (self.im > 0.0):
            raise InvalidInput(f"spectral parameter needs Im z > 0, got {self.im!r}")
        object.__setattr__(self, "re", float(self.re))
        object.__setattr__(self, "im", float(self.im))

    @property
    def z(self) -> complex:
        return complex(self.re, self.im)

    def with_im(self, im: float) -> "HalfPlanePoint":
        return HalfPlanePoint(self.re, im)

    def __complex__(self):
        return self.z


def as_point(z) -> HalfPlanePoint:
    if isinstance(z, HalfPlanePoint):
        return z
    z = complex(z)
    return HalfPlanePoint(z.real, z.imag)


@dataclass(frozen=True, eq=False)
class VarianceMatrix:
    """Symmetric nonnegative matrix of variances ``s_ij``."""

    entries: np.ndarray

    def __post_init__(self):
        s = np.array(self.entries, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
            raise InvalidInput(f"variance matrix must be square and nonempty, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidInput("variance matrix has non-finite entries")
        if np.any(s < 0):
            raise InvalidInput("variance matrix has negative entries")
        scale = max(1.0, float(np.abs(s).max()))
        if np.abs(s - s.T).max() > 1e-12 * scale:
            raise InvalidInput("variance matrix is not symmetric")
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        object.__setattr__(self, "entries", s)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def is_doubly_stochastic(self) -> bool:
        return bool(np.all(np.abs(self.row_sums - 1.0) <= 1e-12))

    @property
    def bounds(self) -> tuple[float, float]:
        """``(c_lower, c_upper)`` with ``c_lower/n <= s_ij <= c_upper/n``."""
        return float(self.n * self.entries.min()), float(self.n * self.entries.max())

    @property
    def norm_inf(self) -> float:
        return float(self.row_sums.max())

    @classmethod
    def wigner(cls, n: int) -> "VarianceMatrix":
        return cls(np.full((n, n), 1.0 / n))

    @classmethod
    def from_blocks(cls, values, n: int) -> "VarianceMatrix":
        """Piecewise-constant matrix: ``values`` is k x k, each block (n/k) x (n/k), scaled by 1/n."""
        values = np.asarray(values, dtype=float)
        k = values.shape[0]
        if values.shape != (k, k) or n % k:
            raise InvalidInput(f"need a square block table and n divisible by {k}")
        return cls(np.kron(values, np.ones((n // k, n // k))) / n)

    @classmethod
    def four_block(cls, a: float, n: int = 4) -> "VarianceMatrix":
        """The 4 x 4 block family with value ``a`` on the lower 3 x 3 corner and in (0, 0)."""
        values = np.full((4, 4), a)
        values[0, 1:] = values[1:, 0] = 1.0
        return cls.from_blocks(values, n)


@dataclass(frozen=True)
class SolverOpts:
    tol: float = 1e-10
    max_iter: int = 10_000
    eta_start: float = 1.0
    eta_factor: float = 0.7
    newton_switch: float = 1e-3


@dataclass(frozen=True, eq=False)
class SolutionVector:
    z: HalfPlanePoint
    m: np.ndarray
    residual: float

    @property
    def mean(self) -> complex:
        return complex(np.mean(self.m))

    @property
    def density(self) -> float:
        return float(np.mean(self.m.imag) / np.pi)


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    rho: np.ndarray
    components: np.ndarray | None = None
    eta_used: float = 0.0
    valid: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise InvalidInput("density grid must be a nonempty 1d sequence")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInput("density grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.valid is None:
            object.__setattr__(self, "valid", np.isfinite(self.rho))

    @property
    def mass(self) -> float:
        ok = np.where(np.isfinite(self.rho), self.rho, 0.0)
        return float(np.trapezoid(ok, self.grid))

    def __call__(self, tau):
        return np.interp(tau, self.grid, self.rho, left=0.0, right=0.0)


@dataclass(frozen=True, eq=False)
class SaturatedF:
    entries: np.ndarray
    norm: float
    pf_vector: np.ndarray
    gap: float


@dataclass(frozen=True)
class SupportSet:
    intervals: tuple[tuple[float, float], ...] = ()

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def contains(self, x: float) -> bool:
        return any(a <= x <= b for a, b in self.intervals)


@dataclass(frozen=True, eq=False)
class ExponentFit:
    slope: float
    kind: str  # "edge", "cusp" or "unclassified"
    offsets: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)


# ----------------------------------------------------------------------------
# Semicircle
# ----------------------------------------------------------------------------


def msc(z) -> complex:
    """Stieltjes transform of the semicircle law.

    ``sqrt(z-2)*sqrt(z+2)`` with principal factors behaves like ``z`` at
    infinity on the whole upper half-plane; the root of ``1 + (z+m)m = 0``
    is taken in the cancellation-free form ``-2/(z + sqrt(z^2-4))``.
    """
    z = as_point(z).z
    root = np.sqrt(z - 2.0) * np.sqrt(z + 2.0)
    return complex(-2.0 / (z + root))


def msc_array(z):
    """Elementwise ``msc`` for arrays of upper half-plane points."""
    z = np.asarray(z, dtype=complex)
    return -2.0 / (z + np.sqrt(z - 2.0) * np.sqrt(z + 2.0))


def semicircle_density(x):
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.clip(4.0 - x * x, 0.0, None)) / (2.0 * np.pi)


def semicircle_curve(grid) -> DensityCurve:
    grid = np.asarray(grid, dtype=float)
    return DensityCurve(grid, semicircle_density(grid), eta_used=0.0)


def catalan_moment(k: int) -> int:
    """``binom(2k, k)/(k+1)``: the 2k-th moment of the semicircle law."""
    if k < 0:
        raise InvalidInput("moment order must be nonnegative")
    if k > 30:
        raise InvalidInput("catalan_moment is restricted to k <= 30")
    return math.comb(2 * k, k) // (k + 1)


# ----------------------------------------------------------------------------
# Solver
# ----------------------------------------------------------------------------


def _entries(S) -> np.ndarray:
    if isinstance(S, VarianceMatrix):
        return S.entries
    return VarianceMatrix(S).entries


def vde_residual(S, z, m) -> float:
    """``max_i |1 + (z + (S m)_i) m_i|``."""
    s = _entries(S)
    m = np.asarray(m, dtype=complex)
    if m.shape != (s.shape[0],):
        raise InvalidInput(f"solution has shape {m.shape}, expected ({s.shape[0]},)")
    z = as_point(z).z
    return float(np.abs(1.0 + (z + s @ m) * m).max())


def _eta_ladder(eta: float, opts: SolverOpts) -> list[float]:
    if eta >= opts.eta_start:
        return [eta]
    levels = []
    level = opts.eta_start
    while level > eta:
        levels.append(level)
        level *= opts.eta_factor
    levels.append(eta)
    return levels


def _newton(s, z, m, tol, budget):
    """Damped Newton on r(m) = 1 + (z + S m) m; returns (m, residual, steps)."""
    n = m.size
    w = z + s @ m
    r = 1.0 + w * m
    res = np.abs(r).max()
    steps = 0
    while res > tol and steps < budget:
        jac = s * m[:, None]
        jac[np.diag_indices(n)] += w
        try:
            dm = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        while step > 2.0**-20:
            cand = m - step * dm
            if np.all(cand.imag > 0):
                wc = z + s @ cand
                rc = 1.0 + wc * cand
                rc_max = np.abs(rc).max()
                if rc_max < res:
                    m, w, r, res = cand, wc, rc, rc_max
                    break
            step *= 0.5
        else:
            break
        steps += 1
    return m, res, steps


def _phi_steps(s, z, m, target, budget):
    """Plain iteration of m -> -1/(z + S m) until the residual drops below target."""
    steps = 0
    res = np.abs(1.0 + (z + s @ m) * m).max()
    while res > target and steps < budget:
        m = -1.0 / (z + s @ m)
        res = np.abs(1.0 + (z + s @ m) * m).max()
        steps += 1
    return m, res, steps


def _solve_active(s, z: HalfPlanePoint, opts: SolverOpts, m0=None):
    levels = _eta_ladder(z.im, opts)
    if m0 is not None:
        levels = [z.im]
        m = np.array(m0, dtype=complex)
    else:
        m = np.full(s.shape[0], -1.0 / complex(z.re, levels[0]))
    res = np.inf
    for eta in levels:
        zz = complex(z.re, eta)
        budget = opts.max_iter
        while True:
            if res > opts.newton_switch or not np.all(m.imag > 0):
                m, res, used = _phi_steps(s, zz, m, opts.newton_switch, budget)
                budget -= used
            m, res, used = _newton(s, zz, m, opts.tol, min(budget, 200))
            budget -= max(used, 1)
            if res <= opts.tol:
                break
            if budget <= 0:
                raise NonConvergence(f"VDE solver stalled at eta={eta:.3e}", float(res), m)
            # Newton stalled: fall back to a batch of contraction steps.
            m, res, used = _phi_steps(s, zz, m, 0.0, min(budget, 50))
            budget -= used
    return m


def solve_vde(S, z, opts: SolverOpts | None = None, *, m0=None) -> SolutionVector:
    """Solve ``1 + (z + (S m)_i) m_i = 0`` with ``Im m > 0``.

    Uses eta-continuation from ``Im z = opts.eta_start`` down to the target
    (geometric factor ``opts.eta_factor``); each level is warm-started from
    the previous one, runs the contraction ``m -> -1/(z + S m)`` until the
    residual is below ``opts.newton_switch`` and then polishes with damped
    Newton. A supplied ``m0`` skips the continuation.

    Rows of ``S`` that vanish identically decouple and get ``m_i = -1/z``.
    """
    opts = opts or SolverOpts()
    s = _entries(S)
    z = as_point(z)
    m = np.full(s.shape[0], -1.0 / z.z, dtype=complex)
    active = s.any(axis=1)
    if active.any():
        sa = s[np.ix_(active, active)]
        start = None if m0 is None else np.asarray(m0, dtype=complex)[active]
        m[active] = _solve_active(sa, z, opts, start)
    residual = vde_residual(s, z, m)
    if residual > opts.tol:
        raise NonConvergence("VDE solution misses tolerance", residual, m)
    m.setflags(write=False)
    return SolutionVector(z, m, residual)


def vde_density_function(S, opts: SolverOpts | None = None) -> Callable[[float, float], float]:
    """Callable ``(tau, eta) -> Im<m(tau + i eta)>/pi`` for exponent fits."""

    def density(tau, eta):
        return solve_vde(S, HalfPlanePoint(tau, eta), opts).density

    return density


def sc_density(S, grid, eta: float, components: bool = False,
               opts: SolverOpts | None = None, threads: int = 1) -> DensityCurve:
    """Self-consistent density at finite ``eta`` on ``grid``.

    Points whose solve fails are reported as NaN with ``valid=False``
    instead of aborting the sweep.
    """
    if not eta > 0:
        raise InvalidInput("eta must be positive")
    grid = np.asarray(grid, dtype=float)
    s = _entries(S)

    def one(tau):
        try:
            return solve_vde(s, HalfPlanePoint(tau, eta), opts).m.imag / np.pi
        except NonConvergence:
            return np.full(s.shape[0], np.nan)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            cols = list(pool.map(one, grid))
    else:
        cols = [one(t) for t in grid]
    nu = np.array(cols).T if cols else np.zeros((s.shape[0], 0))
    rho = nu.mean(axis=0)
    return DensityCurve(grid, rho, nu if components else None, float(eta), np.isfinite(rho))


def support_set(d: DensityCurve, threshold: float) -> SupportSet:
    """Maximal grid intervals where ``rho > threshold``.

    Dropouts spanning at most two grid spacings are bridged; isolated single
    points (zero width) are below resolution and dropped.
    """
    if not threshold > 0:
        raise InvalidInput("threshold must be positive")
    grid = d.grid
    above = np.where(np.isfinite(d.rho), d.rho, -np.inf) > threshold
    if grid.size < 2 or not above.any():
        return SupportSet(())
    h = float(np.median(np.diff(grid)))
    edges = np.diff(above.astype(int))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(grid.size - 1)
    runs = []
    for a, b in zip(starts, ends):
        if runs and grid[a] - grid[runs[-1][1]] <= 2 * h * (1 + 1e-9):
            runs[-1][1] = b
        else:
            runs.append([a, b])
    return SupportSet(tuple((float(grid[a]), float(grid[b])) for a, b in runs if b > a))


# ----------------------------------------------------------------------------
# Saturated self-energy and stability
# ----------------------------------------------------------------------------


def saturated_f(S, m) -> SaturatedF:
    s = _entries(S)
    m = m.m if isinstance(m, SolutionVector) else np.asarray(m, dtype=complex)
    am = np.abs(m)
    F = am[:, None] * s * am[None, :]
    w, v = np.linalg.eigh(F)
    norm = float(np.abs(w).max())
    f = v[:, np.argmax(w)]
    f = f * np.sign(f.sum() or 1.0)
    mags = np.sort(np.abs(w))[::-1]
    gap = norm - float(mags[1]) if mags.size > 1 else norm
    return SaturatedF(F, norm, f, gap)


def f_norm_identity_defect(F: SaturatedF, m, z) -> float:
    """``| ||F||_2 - (1 - eta <f|m|>/<f Im m/|m|>) |``.

    Both averages carry the same normalization, so its choice cancels.
    """
    m = m.m if isinstance(m, SolutionVector) else np.asarray(m, dtype=complex)
    eta = as_point(z).im
    am = np.abs(m)
    f = F.pf_vector
    den = float(np.mean(f * m.imag / am))
    if den < 1e-14:
        raise DegenerateDenominator(f"<f Im m/|m|> = {den:.3e}")
    num = float(np.mean(f * am))
    return abs(F.norm - (1.0 - eta * num / den))


def stability_operator(S, m) -> np.ndarray:
    """Matrix of ``1 - m^2 S``."""
    s = _entries(S)
    m = m.m if isinstance(m, SolutionVector) else np.asarray(m, dtype=complex)
    return np.eye(s.shape[0]) - (m * m)[:, None] * s


def stability_operator_polar(S, m) -> np.ndarray:
    """The same operator written as ``|m| (1 - e^{2i phi} F) |m|^{-1}``."""
    s = _entries(S)
    m = m.m if isinstance(m, SolutionVector) else np.asarray(m, dtype=complex)
    am = np.abs(m)
    phase2 = (m / am) ** 2
    F = am[:, None] * s * am[None, :]
    inner = np.eye(s.shape[0]) - phase2[:, None] * F
    return am[:, None] * inner / am[None, :]


def stability_inverse_norm(S, m, norm_kind: str = "l2") -> float:
    """Norm of ``(1 - m^2 S)^{-1}`` in l2 or in the induced sup norm.

    The sup norm is read off the explicit inverse; it tracks the l2 value
    because ``1/(1-R) = 1 + R + R (1/(1-R)) R`` moves the inverse between
    the two norms at the cost of ``||R||`` factors only.
    """
    B = stability_operator(S, m)
    smin = float(np.linalg.svd(B, compute_uv=False)[-1])
    if smin < 1e-14:
        raise SingularStability(f"smallest singular value {smin:.3e}")
    if norm_kind == "l2":
        return 1.0 / smin
    if norm_kind == "sup":
        return float(np.abs(np.linalg.inv(B)).sum(axis=1).max())
    raise InvalidInput(f"unknown norm kind {norm_kind!r}")


# ----------------------------------------------------------------------------
# Quantiles, re-transform, exponents
# ----------------------------------------------------------------------------


def cumulative_mass(d: DensityCurve, normalize: bool = True) -> np.ndarray:
    rho = np.where(np.isfinite(d.rho), d.rho, 0.0)
    cum = cumulative_trapezoid(rho, d.grid, initial=0.0)
    total = cum[-1]
    if total < 0.99:
        raise MassDeficit(f"density integrates to {total:.4f} on the grid")
    return cum / total if normalize else cum


def quantiles(d: DensityCurve, count: int) -> np.ndarray:
    """``gamma_i`` with ``int_{-inf}^{gamma_i} rho = i/count``, ``i = 1..count``.

    The grid mass is normalized to one before inversion.
    """
    cum = cumulative_mass(d)
    targets = np.arange(1, count + 1) / count
    hi = np.clip(np.searchsorted(cum, targets, side="left"), 1, cum.size - 1)
    lo = hi - 1
    c0, c1 = cum[lo], cum[hi]
    w = np.where(c1 > c0, (targets - c0) / np.where(c1 > c0, c1 - c0, 1.0), 1.0)
    return d.grid[lo] + np.clip(w, 0.0, 1.0) * (d.grid[hi] - d.grid[lo])


def index_of(d: DensityCurve, E: float, count: int) -> int:
    """``ceil(count * int_{-inf}^E rho)``: index of the quantile closest to E."""
    c = float(np.interp(E, d.grid, cumulative_mass(d)))
    return int(math.ceil(count * c - 1e-9))


def stieltjes_transform(d: DensityCurve, z) -> complex:
    """Trapezoid quadrature of ``int rho(tau)/(tau - z) dtau`` over the grid."""
    z = as_point(z).z
    rho = np.where(np.isfinite(d.rho), d.rho, 0.0)
    return complex(np.trapezoid(rho / (d.grid - z), d.grid))


def _classify(slope: float) -> str:
    if 0.40 <= slope <= 0.60:
        return "edge"
    if 0.26 <= slope < 0.40:
        return "cusp"
    return "unclassified"


def edge_exponent(density: Callable[[float, float], float], tau0: float, side: str = "left",
                  omega_range=(1e-4, 1e-2), num: int = 13, eta_ratio: float = 0.1) -> ExponentFit:
    """Log-log slope of ``rho(tau0 +- omega)`` over a geometric ladder of offsets.

    ``density(tau, eta)`` is evaluated with ``eta = eta_ratio * omega``
    (``eta_ratio <= 0.1``). Ladder points with ``rho < 10 eta`` carry no
    usable signal and are left out of the fit.
    """
    if not 0 < eta_ratio <= 0.1:
        raise InvalidInput("eta_ratio must lie in (0, 0.1]")
    offsets = np.geomspace(*omega_range, num)
    signs = {"left": [-1.0], "right": [1.0], "both": [-1.0, 1.0]}.get(side)
    if signs is None:
        raise InvalidInput(f"unknown side {side!r}")
    om = np.concatenate([offsets] * len(signs))
    taus = np.concatenate([tau0 + sg * offsets for sg in signs])
    etas = eta_ratio * om
    rho = np.array([density(t, e) for t, e in zip(taus, etas)])
    ok = rho >= 10 * etas
    if ok.sum() < 2:
        raise InsufficientSignal(f"only {int(ok.sum())} ladder points above 10*eta")
    slope = float(np.polyfit(np.log(om[ok]), np.log(rho[ok]), 1)[0])
    return ExponentFit(slope, _classify(slope), om, rho)


def interior_minimum(S, bracket: tuple[float, float], eta: float = 1e-12,
                     opts: SolverOpts | None = None) -> tuple[float, float]:
    """Location and value of the density minimum inside ``bracket``.

    Inside a gap the density vanishes on an interval; the bounded search then
    returns some point of it.
    """
    f = vde_density_function(S, opts)
    res = minimize_scalar(lambda t: f(t, eta), bounds=bracket, method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


# ----------------------------------------------------------------------------
# Profiles
# ----------------------------------------------------------------------------


def profile_to_matrix(profile: Callable, n: int) -> VarianceMatrix:
    """``s_ij = profile(i/n, j/n)/n`` for ``i, j = 1..n``, symmetrized."""
    x = np.arange(1, n + 1) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    vals = np.broadcast_to(np.asarray(profile(X, Y), dtype=float), (n, n))
    vals_t = np.broadcast_to(np.asarray(profile(Y, X), dtype=float), (n, n))
    vals = 0.5 * (vals + vals_t)
    if np.any(vals < 0):
        raise NegativeProfile("profile takes negative values")
    return VarianceMatrix(vals / n)


def block_profile(values) -> Callable:
    """Piecewise-constant profile on a k x k grid of cells ``((a-1)/k, a/k]``."""
    values = np.asarray(values, dtype=float)
    k = values.shape[0]

    def profile(x, y):
        ix = np.clip(np.ceil(np.asarray(x) * k - 1e-9).astype(int) - 1, 0, k - 1)
        iy = np.clip(np.ceil(np.asarray(y) * k - 1e-9).astype(int) - 1, 0, k - 1)
        return values[ix, iy]

    return profile
