"""Dyson Brownian motion and normalized gap statistics.

The eigenvalue SDE is integrated as

    d lambda_i = sqrt(2 / (beta n)) dB_i + (-lambda_i / 2 + (1/n) sum_{j != i} 1 / (lambda_i - lambda_j)) dt,

whose noise prefactor makes the Gaussian ensemble of class ``beta`` (with
off-diagonal variance ``1/n``) exactly stationary. Other normalizations seen
in the literature (``sqrt(beta/2)/sqrt(n)`` or ``sqrt(2/n)``) do not preserve
that ensemble for both classes at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import EmptyWindow, InvalidInput, StepFloor, TooFewGaps
from .vde import DensityCurve, semicircle_density

__all__ = [
    "DbmState",
    "Trajectory",
    "GapSample",
    "dbm_simulate",
    "dbm_trajectory",
    "dbm_drift",
    "normalized_gaps",
    "gap_cdf_distance",
    "sine_kernel",
    "sine_pair_correlation",
    "semicircle_cdf",
    "two_point_estimate",
]

STEP_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DbmState:
    lambdas: np.ndarray
    t: float = 0.0
    beta: int = 2

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float)
        if lam.ndim != 1 or lam.size == 0 or not np.all(np.isfinite(lam)):
            raise InvalidInput("lambdas must be a nonempty finite vector")
        if np.any(np.diff(lam) <= 0):
            raise InvalidInput("lambdas must be strictly increasing")
        if self.beta not in (1, 2):
            raise InvalidInput("beta must be 1 or 2")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def n(self) -> int:
        return self.lambdas.size

    @property
    def min_gap(self) -> float:
        return float(np.diff(self.lambdas).min()) if self.n > 1 else np.inf


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    lambdas: np.ndarray  # (len(times), n)
    final: DbmState


def dbm_drift(lam: np.ndarray) -> np.ndarray:
    n = lam.size
    diff = lam[:, None] - lam[None, :]
    np.fill_diagonal(diff, np.inf)
    return -0.5 * lam + (1.0 / diff).sum(axis=1) / n


def _run(initial: DbmState, t_end: float, dt: float, seed: int, noise: bool,
         gap_guard: float | None, checkpoints):
    if not t_end >= initial.t:
        raise InvalidInput("t_end precedes the initial time")
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    n, beta = initial.n, initial.beta
    amp = np.sqrt(2.0 / (beta * n)) if noise else 0.0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lam = initial.lambdas.copy()
    t = float(initial.t)
    h = dt
    snaps_t, snaps = [], []
    ck = list(checkpoints)
    while ck and ck[0] <= t:
        snaps_t.append(t)
        snaps.append(lam.copy())
        ck.pop(0)
    slack = 1e-12 * max(1.0, abs(t_end))
    while t_end - t > slack:
        step = min(h, t_end - t)
        if t_end - t - step < slack:
            step = t_end - t
        if gap_guard is not None and n > 1:
            step = min(step, gap_guard * np.diff(lam).min() ** 2)
        drift = dbm_drift(lam)
        while True:
            if step < STEP_FLOOR:
                gaps = np.diff(lam)
                k = int(np.argmin(gaps)) if n > 1 else -1
                raise StepFloor("time step fell below the floor", t, float(gaps[k]) if n > 1 else np.inf, k)
            xi = rng.standard_normal(n) if noise else 0.0
            trial = lam + drift * step + amp * np.sqrt(step) * xi
            if np.all(np.isfinite(trial)) and np.all(np.diff(trial) > 0):
                break
            step *= 0.5
        lam = trial
        # the last step is clipped to land on t_end exactly
        t = t_end if t_end - t - step < slack else t + step
        h = min(dt, 2 * step) if step < h else h
        while ck and ck[0] <= t:
            snaps_t.append(t)
            snaps.append(lam.copy())
            ck.pop(0)
    return DbmState(lam, float(max(t, t_end)), beta), snaps_t, snaps


def dbm_simulate(initial: DbmState, t_end: float, dt: float, seed: int, *,
                 noise: bool = True, gap_guard: float | None = None) -> DbmState:
    """Euler-Maruyama integration to ``t_end``.

    A step that breaks the ordering is rejected and retried at half size
    with fresh noise; the size then recovers by doubling up to ``dt``. With
    ``gap_guard`` set, steps are also capped at ``gap_guard * min_gap**2``.
    Raises StepFloor when the step would drop below 1e-12. ``noise=False``
    integrates the deterministic drift only.
    """
    final, _, _ = _run(initial, t_end, dt, seed, noise, gap_guard, [])
    return final


def dbm_trajectory(initial: DbmState, t_end: float, dt: float, seed: int, stride: float, *,
                   noise: bool = True, gap_guard: float | None = None) -> Trajectory:
    """Same path as ``dbm_simulate`` with snapshots at the first accepted time
    past each multiple of ``stride`` (and at the start and end)."""
    if not stride > 0:
        raise InvalidInput("stride must be positive")
    marks = initial.t + stride * np.arange(int(np.floor((t_end - initial.t) / stride)) + 1)
    final, ts, snaps = _run(initial, t_end, dt, seed, noise, gap_guard, marks)
    if not ts or ts[-1] != final.t:
        ts.append(final.t)
        snaps.append(final.lambdas.copy())
    return Trajectory(np.array(ts), np.array(snaps), final)


# ----------------------------------------------------------------------------
# Gaps
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GapSample:
    gaps: np.ndarray
    window: tuple = field(default=(-1.0, 1.0))

    def __len__(self):
        return self.gaps.size

    @property
    def mean(self) -> float:
        return float(self.gaps.mean())

    @classmethod
    def pool(cls, samples) -> "GapSample":
        samples = list(samples)
        if not samples:
            raise EmptyWindow("nothing to pool")
        return cls(np.concatenate([s.gaps for s in samples]), samples[0].window)


def _density_fn(d) -> Callable:
    if d is None:
        return semicircle_density
    if isinstance(d, DensityCurve) or callable(d):
        return d
    raise InvalidInput("density must be a DensityCurve or a callable")


def normalized_gaps(state, d=None, window=(-1.0, 1.0)) -> GapSample:
    """``n rho(lambda_i) (lambda_{i+1} - lambda_i)`` for consecutive pairs
    inside ``window``; ``d`` defaults to the semicircle density."""
    lam = state.lambdas if isinstance(state, DbmState) else np.sort(np.asarray(state, dtype=float))
    lo, hi = window
    rho = _density_fn(d)
    left, right = lam[:-1], lam[1:]
    sel = (left >= lo) & (right <= hi)
    if not sel.any():
        raise EmptyWindow(f"no consecutive eigenvalue pairs in [{lo}, {hi}]")
    g = lam.size * np.asarray(rho(left[sel]), dtype=float) * (right[sel] - left[sel])
    return GapSample(g, (float(lo), float(hi)))


def gap_cdf_distance(a: GapSample, b: GapSample) -> float:
    """Two-sample Kolmogorov-Smirnov statistic between the gap samples."""
    if len(a) < 200 or len(b) < 200:
        raise TooFewGaps(f"need at least 200 gaps per sample, got {len(a)} and {len(b)}")
    return float(stats.ks_2samp(a.gaps, b.gaps).statistic)


# ----------------------------------------------------------------------------
# Two-point correlations
# ----------------------------------------------------------------------------


def sine_kernel(x):
    """``sin(pi x) / (pi x)`` with value 1 at the origin."""
    return np.sinc(x)


def sine_pair_correlation(alpha):
    return 1.0 - np.sinc(alpha) ** 2


def semicircle_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -2.0, 2.0)
    return 0.5 + x * np.sqrt(4.0 - x * x) / (4 * np.pi) + np.arcsin(x / 2) / np.pi


def two_point_estimate(samples, E: float = 0.0, bins=None, *, unfold: Callable = semicircle_cdf,
                       half_width: float = 0.1):
    """Empirical pair correlation of unfolded eigenvalues around ``E``.

    Each spectrum is unfolded by ``x = n * unfold(lambda)`` so the local mean
    spacing is one. Reference points are those within ``n * half_width``
    unfolded units of ``n * unfold(E)``; for every reference the signed
    distances to all other points are binned. Returns ``(centers, values)``
    where ``values`` is the pair density per reference and unit length.
    """
    if bins is None:
        bins = np.linspace(-4.0, 4.0, 41)
    bins = np.asarray(bins, dtype=float)
    if bins.ndim != 1 or bins.size < 2 or np.any(np.diff(bins) <= 0):
        raise InvalidInput("bins must be increasing edges")
    counts = np.zeros(bins.size - 1)
    refs = 0
    reach = max(abs(bins[0]), abs(bins[-1]))
    for lam in samples:
        lam = np.sort(np.asarray(lam, dtype=float))
        n = lam.size
        x = n * unfold(lam)
        x0 = n * unfold(E)
        ref = np.flatnonzero(np.abs(x - x0) <= n * half_width)
        for i in ref:
            lo, hi = np.searchsorted(x, [x[i] - reach, x[i] + reach])
            dx = np.delete(x[lo:hi], i - lo) - x[i]
            counts += np.histogram(dx, bins)[0]
        refs += ref.size
    if refs == 0:
        raise EmptyWindow("no reference points near E")
    centers = 0.5 * (bins[1:] + bins[:-1])
    return centers, counts / (refs * np.diff(bins))
