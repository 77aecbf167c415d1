"""Reproducible sampling of hermitian random matrices.

Randomness is derived per (seed, sample index, row) through
``numpy.random.SeedSequence`` spawn keys, so a matrix depends only on its
own coordinates and can be generated in any order or in parallel.
"""

from __future__ import annotations

import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidCovariance, InvalidInput
from .mde import SelfEnergySpec, apply_self_energy
from .vde import VarianceMatrix

__all__ = [
    "EnsembleSpec",
    "SampleBatch",
    "CovarianceFactor",
    "SYMMETRIES",
    "KINDS",
    "LAWS",
    "LAW_FOURTH_MOMENT",
    "sample",
    "sample_one",
    "empirical_self_energy",
    "covariance_factorize",
    "wigner_kappa",
    "analytic_self_energy",
]

SYMMETRIES = ("real_symmetric", "complex_hermitian")
KINDS = ("wigner", "generalized_wigner", "wigner_type", "gaussian_correlated")
LAWS = ("gaussian", "rademacher", "uniform")
# E x^4 of the standardized law
LAW_FOURTH_MOMENT = {"gaussian": 3.0, "rademacher": 1.0, "uniform": 9.0 / 5.0}


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    n: int
    symmetry: str = "real_symmetric"
    kind: str = "wigner"
    variance: VarianceMatrix | None = None
    self_energy: SelfEnergySpec | None = None
    entry_law: str = "gaussian"

    def __post_init__(self):
        if self.symmetry not in SYMMETRIES:
            raise InvalidInput(f"unknown symmetry class {self.symmetry!r}")
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown ensemble kind {self.kind!r}")
        if self.entry_law not in LAWS:
            raise InvalidInput(f"unknown entry law {self.entry_law!r}")
        if self.kind in ("generalized_wigner", "wigner_type"):
            if self.variance is None:
                raise InvalidInput(f"{self.kind} needs a variance matrix")
            v = self.variance if isinstance(self.variance, VarianceMatrix) else VarianceMatrix(self.variance)
            object.__setattr__(self, "variance", v)
            if v.n != self.n:
                raise InvalidInput("variance matrix size does not match n")
            if self.kind == "generalized_wigner" and not v.is_doubly_stochastic:
                raise InvalidInput("generalized Wigner needs a doubly stochastic variance matrix")
        if self.kind == "gaussian_correlated":
            if self.entry_law != "gaussian":
                raise InvalidInput("correlated sampling is Gaussian only")
            if self.self_energy is None or self.self_energy.kind != "full" or self.self_energy.n != self.n:
                raise InvalidInput("gaussian_correlated needs a full self-energy of matching size")

    @property
    def beta(self) -> int:
        return 1 if self.symmetry == "real_symmetric" else 2

    @property
    def variance_matrix(self) -> VarianceMatrix:
        """``s_ij = E |h_ij|^2``."""
        if self.kind == "wigner":
            return VarianceMatrix.wigner(self.n)
        if self.kind == "gaussian_correlated":
            k = self.self_energy.kappa
            i, j = np.indices((self.n, self.n))
            s = k[i, j, j, i]
            return VarianceMatrix(0.5 * (s + s.T))
        return self.variance

    def self_energy_spec(self) -> SelfEnergySpec:
        """Exact ``E[H R H]`` for this ensemble, in the cheapest representation."""
        rs = self.symmetry == "real_symmetric"
        if self.kind == "wigner":
            return SelfEnergySpec.isotropic(self.n, real_symmetric=rs)
        if self.kind == "gaussian_correlated":
            return self.self_energy
        return SelfEnergySpec.diagonal(self.variance, real_symmetric=rs)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    spec: EnsembleSpec
    seed: int
    matrices: list

    def __len__(self):
        return len(self.matrices)

    def __iter__(self):
        return iter(self.matrices)


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Square-root factor on the independent real components of H.

    Components are the upper-triangle entries (real parts for the complex
    class), followed by the strict upper triangle's imaginary parts for the
    complex class.
    """

    factor: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    symmetry: str
    n: int

    @property
    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def assemble(self, x) -> np.ndarray:
        n, p = self.n, self.rows.size
        if self.symmetry == "real_symmetric":
            H = np.zeros((n, n))
            H[self.rows, self.cols] = x
            H[self.cols, self.rows] = x
            return H
        H = np.zeros((n, n), dtype=complex)
        off = self.rows != self.cols
        vals = x[:p].astype(complex)
        vals[off] += 1j * x[p:]
        H[self.rows, self.cols] = vals
        H[self.cols, self.rows] = vals.conj()
        return H


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _standardized(rng: np.random.Generator, law: str, size: int) -> np.ndarray:
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "rademacher":
        return 2.0 * rng.integers(0, 2, size) - 1.0
    return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)


def covariance_factorize(kappa, symmetry: str = "real_symmetric", tol: float = 1e-10) -> CovarianceFactor:
    """Symmetric square root of the covariance of the independent components.

    ``kappa[i,j,k,l] = E h_ij h_kl``. For the complex class the real and
    imaginary parts are split with ``Re a = (a + conj a)/2`` and
    ``conj h_kl = h_lk``.
    """
    kappa = np.asarray(kappa, dtype=complex)
    n = kappa.shape[0]
    rows, cols = np.triu_indices(n)
    if symmetry == "real_symmetric":
        C = kappa[rows[:, None], cols[:, None], rows[None, :], cols[None, :]].real
    elif symmetry == "complex_hermitian":
        ab = kappa[rows[:, None], cols[:, None], rows[None, :], cols[None, :]]   # E a b
        abc = kappa[rows[:, None], cols[:, None], cols[None, :], rows[None, :]]  # E a conj(b)
        off = rows != cols
        rr = 0.5 * (ab + abc).real
        ii = 0.5 * (abc - ab).real
        ri = 0.5 * (ab - abc).imag
        C = np.block([[rr, ri[:, off]], [ri[:, off].T, ii[np.ix_(off, off)]]])
    else:
        raise InvalidInput(f"unknown symmetry class {symmetry!r}")
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    scale = max(1.0, float(np.abs(w).max()))
    if w[0] < -tol * scale:
        raise InvalidCovariance("component covariance is not positive semidefinite", float(w[0]))
    factor = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return CovarianceFactor(factor, rows, cols, symmetry, n)


def wigner_kappa(S, symmetry: str = "real_symmetric") -> np.ndarray:
    """``E h_ij h_kl`` for independent entries with variances ``s_ij``."""
    s = S.entries if isinstance(S, VarianceMatrix) else np.asarray(S, dtype=float)
    n = s.shape[0]
    eye = np.eye(n)
    # complex class: E h_ij h_kl = s_ij [k=j, l=i]
    kappa = np.einsum("ij,jk,il->ijkl", s, eye, eye)
    if symmetry == "real_symmetric":
        kappa = kappa + np.einsum("ij,ik,jl->ijkl", s, eye, eye)
    return kappa


_FACTOR_CACHE: "weakref.WeakKeyDictionary[EnsembleSpec, CovarianceFactor]" = weakref.WeakKeyDictionary()


def _factor_for(spec: EnsembleSpec) -> CovarianceFactor:
    fac = _FACTOR_CACHE.get(spec)
    if fac is None:
        fac = _FACTOR_CACHE[spec] = covariance_factorize(spec.self_energy.kappa, spec.symmetry)
    return fac


def sample_one(spec: EnsembleSpec, seed: int, index: int) -> np.ndarray:
    """The ``index``-th matrix of the stream defined by ``(spec, seed)``."""
    n = spec.n
    if spec.kind == "gaussian_correlated":
        fac = _factor_for(spec)
        xi = _rng(seed, index).standard_normal(fac.factor.shape[0])
        return fac.assemble(fac.factor @ xi)
    s = spec.variance_matrix.entries
    real = spec.symmetry == "real_symmetric"
    H = np.zeros((n, n)) if real else np.zeros((n, n), dtype=complex)
    for i in range(n):
        g = _rng(seed, index, i)
        k = n - i
        sd = np.sqrt(s[i, i:])
        x = _standardized(g, spec.entry_law, k)
        if real:
            row = sd * x
            row[0] *= np.sqrt(2.0)
        else:
            y = _standardized(g, spec.entry_law, k)
            row = sd * (x + 1j * y) / np.sqrt(2.0)
            row[0] = sd[0] * x[0]
        H[i, i:] = row
    iu = np.triu_indices(n, 1)
    H[iu[1], iu[0]] = H[iu].conj()
    return H


def sample(spec: EnsembleSpec, seed: int, count: int, threads: int = 1) -> SampleBatch:
    """``count`` matrices; bit-identical for equal ``(spec, seed, count)`` at any thread count."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            mats = list(pool.map(lambda k: sample_one(spec, seed, k), range(count)))
    else:
        mats = [sample_one(spec, seed, k) for k in range(count)]
    return SampleBatch(spec, seed, mats)


def empirical_self_energy(spec: EnsembleSpec, R, count: int, seed: int):
    """Monte-Carlo mean of ``H R H`` and its per-entry standard error.

    Returns ``(estimate, stderr)`` where ``stderr`` has the shape of the
    estimate (standard error of the real and imaginary parts combined).
    """
    if count < 100:
        raise InvalidInput("empirical_self_energy needs count >= 100")
    R = np.asarray(R)
    acc = np.zeros((spec.n, spec.n), dtype=complex)
    acc2 = np.zeros((spec.n, spec.n))
    for k in range(count):
        H = sample_one(spec, seed, k)
        X = H @ R @ H
        acc += X
        acc2 += np.abs(X) ** 2
    mean = acc / count
    var = np.clip(acc2 / count - np.abs(mean) ** 2, 0.0, None) * count / (count - 1)
    return mean, np.sqrt(var / count)


def analytic_self_energy(spec: EnsembleSpec, R) -> np.ndarray:
    return apply_self_energy(spec.self_energy_spec(), R)
