"""Empirical side of the local laws: resolvents of sampled matrices compared
against Dyson-equation solutions, plus the rigidity, delocalization and
Helffer-Sjostrand counting consequences."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .ensembles import EnsembleSpec, sample_one
from .errors import BulkViolation, EmptyWindow, InvalidInput, QuadratureFailure
from .mde import SelfEnergySpec, SolutionMatrix, apply_self_energy, solve_mde
from .vde import (
    DensityCurve,
    HalfPlanePoint,
    SolutionVector,
    as_point,
    cumulative_mass,
    quantiles,
    solve_vde,
)

__all__ = [
    "ResolventBundle",
    "ErrorReport",
    "ScalingStudy",
    "SmoothedIndicator",
    "ERROR_KINDS",
    "resolvent",
    "error_report",
    "reference_solution",
    "scaling_study",
    "delocalization_stat",
    "rigidity_report",
    "poisson_points",
    "hs_count",
    "empirical_stieltjes",
]

ERROR_KINDS = ("entrywise", "isotropic", "averaged", "d_maxnorm")


class ResolventBundle:
    """Eigendecomposition of one hermitian matrix with a cache of ``G(z)``.

    Cache writes are serialized by a lock and only complete matrices are
    stored, so concurrent readers never see partial results.
    """

    def __init__(self, H, cache: bool = True):
        H = np.asarray(H)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidInput("resolvent needs a square matrix")
        if np.abs(H - H.conj().T).max() > 1e-12 * max(1.0, np.abs(H).max()):
            raise InvalidInput("matrix is not hermitian")
        self.H = H
        self.eigenvalues, self.eigenvectors = np.linalg.eigh(H)
        self._cache: dict[complex, np.ndarray] | None = {} if cache else None
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def G(self, z) -> np.ndarray:
        z = as_point(z).z
        if self._cache is not None:
            hit = self._cache.get(z)
            if hit is not None:
                return hit
        U = self.eigenvectors
        G = (U * (1.0 / (self.eigenvalues - z))) @ U.conj().T
        G.setflags(write=False)
        if self._cache is not None:
            with self._lock:
                self._cache.setdefault(z, G)
        return G

    def stieltjes(self, z) -> complex:
        """``tr G(z)/n``, straight from the eigenvalues."""
        return complex(np.mean(1.0 / (self.eigenvalues - as_point(z).z)))

    def reconstruction_defect(self) -> float:
        U = self.eigenvectors
        R = (U * self.eigenvalues) @ U.conj().T - self.H
        return float(np.linalg.norm(R, 2) / max(np.linalg.norm(self.H, 2), 1e-300))

    def ward_defect(self, z) -> float:
        """``max_i |sum_j |G_ij|^2 - Im G_ii / eta|``."""
        eta = as_point(z).im
        G = self.G(z)
        return float(np.abs((np.abs(G) ** 2).sum(axis=1) - np.diag(G).imag / eta).max())


def resolvent(H, z) -> np.ndarray:
    return ResolventBundle(H, cache=False).G(z)


def empirical_stieltjes(eigenvalues) -> Callable:
    """Vectorized Stieltjes transform of the normalized counting measure."""
    lam = np.asarray(eigenvalues, dtype=float)

    def m(z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for chunk in np.array_split(lam, max(1, lam.size // 64)):
            out += (1.0 / (chunk[:, None] - z.ravel()[None, :])).sum(axis=0).reshape(z.shape)
        return out / lam.size

    return m


@dataclass(frozen=True)
class ErrorReport:
    entrywise: float
    averaged: float
    isotropic: float
    d_maxnorm: float
    z: HalfPlanePoint
    n: int
    ward_defect: float = 0.0
    d_identity_defect: float = 0.0


def _reference_matrix(reference) -> np.ndarray:
    if isinstance(reference, SolutionMatrix):
        return np.asarray(reference.M)
    if isinstance(reference, SolutionVector):
        return np.diag(reference.m)
    ref = np.asarray(reference)
    return np.diag(ref) if ref.ndim == 1 else ref


def error_report(H, z, reference, spec: SelfEnergySpec, T=None, x=None, y=None) -> ErrorReport:
    """Compare ``G(z)`` with the deterministic solution at the same ``z``.

    ``D = HG + S[G]G`` is evaluated from its definition and cross-checked
    against the algebraically equal ``I + (z + S[G])G``; the difference is
    reported as ``d_identity_defect``.
    """
    bundle = H if isinstance(H, ResolventBundle) else ResolventBundle(H, cache=False)
    zp = as_point(z)
    n = bundle.n
    M = _reference_matrix(reference)
    if M.shape != (n, n) or spec.n != n:
        raise InvalidInput("reference / self-energy dimension does not match H")
    G = bundle.G(zp)
    diff = G - M
    T = np.eye(n) if T is None else np.asarray(T)
    if x is None or y is None:
        x = y = np.ones(n) / np.sqrt(n)
    x, y = np.asarray(x), np.asarray(y)
    if T.shape != (n, n) or x.shape != (n,) or y.shape != (n,):
        raise InvalidInput("test matrix / vectors have the wrong dimension")
    SG = apply_self_energy(spec, G)
    SGG = SG @ G
    D = bundle.H @ G + SGG
    D_alt = np.eye(n) + zp.z * G + SGG
    return ErrorReport(
        entrywise=float(np.abs(diff).max()),
        averaged=float(abs(np.trace(T @ diff)) / n),
        isotropic=float(abs(np.vdot(x, diff @ y))),
        d_maxnorm=float(np.abs(D).max()),
        z=zp,
        n=n,
        ward_defect=bundle.ward_defect(zp),
        d_identity_defect=float(np.abs(D - D_alt).max()),
    )


def reference_solution(spec: EnsembleSpec, z):
    """Deterministic comparison object for an ensemble: vector solution for
    independent-entry kinds, matrix solution for correlated ones."""
    if spec.kind == "gaussian_correlated":
        return solve_mde(spec.self_energy, None, z)
    return solve_vde(spec.variance_matrix, z)


@dataclass(frozen=True, eq=False)
class ScalingStudy:
    axis: list
    records: list = field(repr=False)
    medians: dict = field(repr=False)
    p90: dict = field(repr=False)
    slopes: dict = field(default_factory=dict)

    def slope(self, kind: str) -> tuple[float, float]:
        return self.slopes[kind]


def _iso_vectors(seed: int, n: int):
    g = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**32 - 1,)))
    x, y = g.standard_normal((2, n))
    return x / np.linalg.norm(x), y / np.linalg.norm(y)


def _seed_reports(spec, seed, z_list, refs, se_spec):
    bundle = ResolventBundle(sample_one(spec, seed, 0), cache=False)
    x, y = _iso_vectors(seed, spec.n)
    return [error_report(bundle, z, ref, se_spec, None, x, y) for z, ref in zip(z_list, refs)]


def scaling_study(spec_for_n: Callable[[int], EnsembleSpec] | EnsembleSpec, n_list, eta_list,
                  seeds, E: float, threads: int = 1) -> ScalingStudy:
    """Medians/90th percentiles of the four error kinds over seeds on an
    ``(n, eta)`` axis, and log-log slopes of the medians against ``n*eta``.

    Slope confidence half-widths are 95% t-intervals of the least-squares fit.
    """
    if isinstance(spec_for_n, EnsembleSpec):
        base = spec_for_n
        spec_for_n = lambda n: EnsembleSpec(n, base.symmetry, base.kind, base.variance,  # noqa: E731
                                            base.self_energy, base.entry_law)
    axis = [(int(n), float(eta)) for n in n_list for eta in eta_list]
    if len(axis) < 4:
        raise InvalidInput("a slope fit needs at least 4 axis points")
    if any(n * eta < 4 for n, eta in axis):
        raise InvalidInput("scaling study requires n*eta >= 4 on every axis point")
    seeds = list(seeds)
    records = []
    for n in sorted(set(a[0] for a in axis)):
        spec = spec_for_n(n)
        rho_E = reference_solution(spec, HalfPlanePoint(E, 1e-6)).density
        if rho_E < 0.05:
            raise BulkViolation(f"density {rho_E:.3g} at E={E} is below the bulk threshold 0.05")
        etas = [eta for nn, eta in axis if nn == n]
        z_list = [HalfPlanePoint(E, eta) for eta in etas]
        refs = [reference_solution(spec, z) for z in z_list]
        se_spec = spec.self_energy_spec()

        def run(seed):
            return _seed_reports(spec, seed, z_list, refs, se_spec)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                per_seed = list(pool.map(run, seeds))
        else:
            per_seed = [run(s) for s in seeds]
        for seed, reports in zip(seeds, per_seed):
            for eta, rep in zip(etas, reports):
                records.append({"n": n, "eta": eta, "seed": seed,
                                **{k: getattr(rep, k) for k in ERROR_KINDS},
                                "ward_defect": rep.ward_defect,
                                "d_identity_defect": rep.d_identity_defect})
    medians, p90, slopes = {}, {}, {}
    x = np.log([n * eta for n, eta in axis])
    for kind in ERROR_KINDS:
        med, hi = [], []
        for n, eta in axis:
            vals = [r[kind] for r in records if r["n"] == n and r["eta"] == eta]
            med.append(float(np.median(vals)))
            hi.append(float(np.percentile(vals, 90)))
        medians[kind], p90[kind] = np.array(med), np.array(hi)
        fit = stats.linregress(x, np.log(medians[kind]))
        half = float(stats.t.ppf(0.975, len(axis) - 2) * fit.stderr)
        slopes[kind] = (float(fit.slope), half)
    return ScalingStudy(axis, records, medians, p90, slopes)


# ----------------------------------------------------------------------------
# Delocalization and rigidity
# ----------------------------------------------------------------------------


def delocalization_stat(bundle: ResolventBundle, bulk_window) -> float:
    """``max sqrt(n) ||u_i||_inf`` over eigenvectors with eigenvalue in the window."""
    lo, hi = bulk_window
    sel = (bundle.eigenvalues >= lo) & (bundle.eigenvalues <= hi)
    if not sel.any():
        raise EmptyWindow(f"no eigenvalues in [{lo}, {hi}]")
    U = bundle.eigenvectors[:, sel]
    return float(np.sqrt(bundle.n) * np.abs(U).max())


def rigidity_report(eigenvalues, d: DensityCurve, bulk_threshold: float = 0.05):
    """``(max_dev, per_index)`` with ``per_index[i] = |lambda_i - gamma_i|``
    for quantiles in the bulk (``rho(gamma_i) >= bulk_threshold``), NaN elsewhere."""
    lam = eigenvalues.eigenvalues if isinstance(eigenvalues, ResolventBundle) else eigenvalues
    lam = np.sort(np.asarray(lam, dtype=float))
    gamma = quantiles(d, lam.size)
    bulk = d(gamma) >= bulk_threshold
    per_index = np.where(bulk, np.abs(lam - gamma), np.nan)
    max_dev = float(np.nanmax(per_index)) if bulk.any() else 0.0
    return max_dev, per_index


def poisson_points(count: int, d: DensityCurve, rng) -> np.ndarray:
    """``count`` independent points drawn from ``d`` (no repulsion), sorted."""
    cum = cumulative_mass(d)
    u = np.random.default_rng(rng).uniform(size=count)
    return np.sort(np.interp(u, cum, d.grid))


# ----------------------------------------------------------------------------
# Helffer-Sjostrand
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothedIndicator:
    """1 on ``[tau1, tau2]``, 0 outside ``[tau1 - eta0, tau2 + eta0]``, C^2 quintic ramps."""

    tau1: float
    tau2: float
    eta0: float

    def __post_init__(self):
        if not self.tau2 > self.tau1:
            raise InvalidInput("need tau1 < tau2")
        if not self.eta0 >= 1e-4:
            raise InvalidInput("eta0 must be at least 1e-4")

    def _ramp(self, s, k):
        # ramp value/derivatives on the rising side, s in units of eta0
        t = np.clip(s, 0.0, 1.0)
        inside = (s > 0) & (s < 1)
        if k == 0:
            return t**3 * (10 - 15 * t + 6 * t * t)
        if k == 1:
            return np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0) / self.eta0
        return np.where(inside, 60 * t * (1 - t) * (1 - 2 * t), 0.0) / self.eta0**2

    def derivative(self, x, k: int = 0):
        x = np.asarray(x, dtype=float)
        left = (x - (self.tau1 - self.eta0)) / self.eta0
        right = ((self.tau2 + self.eta0) - x) / self.eta0
        if k == 0:
            return np.minimum(self._ramp(left, 0), self._ramp(right, 0))
        sgn = -1.0 if k == 1 else 1.0
        return np.where(x < 0.5 * (self.tau1 + self.tau2), self._ramp(left, k), sgn * self._ramp(right, k))

    def __call__(self, x):
        return self.derivative(x, 0)

    @property
    def transitions(self):
        return [(self.tau1 - self.eta0, self.tau1), (self.tau2, self.tau2 + self.eta0)]


def _chi(eta):
    a = np.abs(eta)
    return np.where(a <= 1, 1.0, np.where(a >= 2, 0.0, 0.5 * (1 + np.cos(np.pi * (a - 1)))))


def _dchi(eta):
    a = np.abs(eta)
    inside = (a > 1) & (a < 2)
    return np.where(inside, -0.5 * np.pi * np.sin(np.pi * (a - 1)), 0.0) * np.sign(eta)


def _gauss_panels(edges, q):
    x, w = np.polynomial.legendre.leggauss(q)
    a, b = np.asarray(edges[:-1]), np.asarray(edges[1:])
    nodes = (0.5 * (b - a)[:, None] * (x[None, :] + 1) + a[:, None]).ravel()
    weights = (0.5 * (b - a)[:, None] * w[None, :]).ravel()
    return nodes, weights


def _hs_once(m_nu, f: SmoothedIndicator, panels: int, eta_floor: float, q: int):
    # lower strip 0 < eta < 1: chi = 1, only the f'' term survives (transitions only)
    sig, wsig = [], []
    for a, b in f.transitions:
        s, w = _gauss_panels(np.linspace(a, b, panels + 1), q)
        sig.append(s)
        wsig.append(w)
    sig, wsig = np.concatenate(sig), np.concatenate(wsig)
    n_geo = int(np.ceil(np.log2(1.0 / eta_floor))) + 1
    eta, weta = _gauss_panels(np.concatenate([[0.0], np.geomspace(eta_floor, 1.0, n_geo)]), q)
    m = m_nu(sig[None, :] + 1j * eta[:, None])
    low = np.sum(weta[:, None] * wsig[None, :] * eta[:, None] * f.derivative(sig, 2)[None, :] * m.imag)

    # upper strip 1 < eta < 2: all three terms, f over its whole support
    a0, b0 = f.tau1 - f.eta0, f.tau2 + f.eta0
    plateau = max(2, int(np.ceil((f.tau2 - f.tau1) / 0.05)))
    edges = np.unique(np.concatenate([np.linspace(a0, f.tau1, panels + 1),
                                      np.linspace(f.tau1, f.tau2, plateau + 1),
                                      np.linspace(f.tau2, b0, panels + 1)]))
    sig, wsig = _gauss_panels(edges, q)
    eta, weta = _gauss_panels(np.linspace(1.0, 2.0, 9), q)
    m = m_nu(sig[None, :] + 1j * eta[:, None])
    W = weta[:, None] * wsig[None, :]
    E = eta[:, None]
    integrand = (E * f.derivative(sig, 2)[None, :] * _chi(eta)[:, None] * m.imag
                 + f.derivative(sig, 0)[None, :] * _dchi(eta)[:, None] * m.imag
                 + E * f.derivative(sig, 1)[None, :] * _dchi(eta)[:, None] * m.real)
    high = np.sum(W * integrand)
    # the lower half-plane contributes the same by m(conj z) = conj m(z)
    return -2.0 * (low + high) / (2 * np.pi)


def hs_count(m_nu: Callable, f: SmoothedIndicator, tol: float = 1e-3) -> float:
    """``int f dnu`` from the Stieltjes transform ``m_nu`` alone.

    Integrates ``d/d(conj z)`` of the almost-analytic extension
    ``(f(s) + i eta f'(s)) chi(eta)`` against ``m_nu``; its real part gives
    the three terms ``eta f'' chi Im m``, ``f chi' Im m`` and
    ``eta f' chi' Re m``. The cutoff ``chi`` is 1 on ``[-1, 1]`` with a
    cosine taper on ``[1, 2]``; the lower half-plane is
    folded onto the upper one by ``m(conj z) = conj m(z)``. ``m_nu`` must
    accept arrays of complex points. The result of a refined rule is
    returned; if it moves by more than ``tol`` from the coarse one the
    quadrature is declared failed.
    """
    floor = 1e-3 * f.eta0
    coarse = _hs_once(m_nu, f, 16, floor, 12)
    fine = _hs_once(m_nu, f, 32, floor / 8, 16)
    if not abs(fine - coarse) <= tol:
        raise QuadratureFailure(f"quadrature estimates differ by {abs(fine - coarse):.2e}")
    return float(fine)
