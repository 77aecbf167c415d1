"""Matrix Dyson equation ``I + (z - A + S[M]) M = 0``.

Matrices are vectorized row-major, so a sandwich ``X -> L X R`` acts on
``vec(X)`` as ``kron(L, R.T)``. Superoperators on n x n matrices are
materialized as n^2 x n^2 arrays only for n <= 64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (
    IllConditioned,
    InvalidInput,
    LosesPositivity,
    NonConvergence,
    SingularStability,
    UnsupportedKind,
)
from .vde import DensityCurve, HalfPlanePoint, SolverOpts, VarianceMatrix, as_point

__all__ = [
    "SelfEnergySpec",
    "SolutionMatrix",
    "PolarParts",
    "SuperOperator",
    "MAX_FULL_N",
    "apply_self_energy",
    "self_energy_matrix",
    "symmetry_defect",
    "positivity_defect",
    "flatness_constants",
    "mde_residual",
    "solve_mde",
    "mde_density",
    "polar_decompose",
    "saturated_superop",
    "superop_norm_and_gap",
    "stability_superop",
    "stability_apply",
    "stability_apply_factored",
    "stability_inverse_norm_mde",
    "stability_factorization",
]

MAX_FULL_N = 64
KINDS = ("isotropic", "diagonal", "full")


@dataclass(frozen=True, eq=False)
class SelfEnergySpec:
    """The self-energy ``S[R] = E[H R H]`` in one of three representations.

    isotropic: ``<R> I``; diagonal: ``diag(S diag(R))`` with ``S`` a
    variance matrix; full: ``S[R]_ij = sum_ab kappa[i,a,b,j] R_ab`` with
    ``kappa[i,j,k,l] = E h_ij h_kl``. ``real_symmetric`` adds the term
    ``s_ij R_ji`` that real symmetric entries contribute (for isotropic
    this is ``R^T/n``); it is ignored for the full kind, where ``kappa``
    already carries it.
    """

    kind: str
    n: int
    variance: VarianceMatrix | None = None
    kappa: np.ndarray | None = None
    real_symmetric: bool = False
    flatness_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKind(f"unknown self-energy kind {self.kind!r}")
        if self.kind == "diagonal":
            if self.variance is None:
                raise InvalidInput("diagonal kind needs a variance matrix")
            v = self.variance if isinstance(self.variance, VarianceMatrix) else VarianceMatrix(self.variance)
            object.__setattr__(self, "variance", v)
            if v.n != self.n:
                raise InvalidInput("variance matrix size does not match n")
        if self.kind == "full":
            if self.n > MAX_FULL_N:
                raise UnsupportedKind(f"full kind is limited to n <= {MAX_FULL_N}")
            k = np.asarray(self.kappa, dtype=float)
            if k.shape != (self.n,) * 4:
                raise InvalidInput(f"kappa must have shape {(self.n,) * 4}, got {k.shape}")
            k = k.copy()
            k.setflags(write=False)
            object.__setattr__(self, "kappa", k)

    @classmethod
    def isotropic(cls, n: int, real_symmetric: bool = False) -> "SelfEnergySpec":
        return cls("isotropic", n, real_symmetric=real_symmetric, flatness_bounds=(1.0, 1.0 + real_symmetric))

    @classmethod
    def diagonal(cls, S, real_symmetric: bool = False) -> "SelfEnergySpec":
        S = S if isinstance(S, VarianceMatrix) else VarianceMatrix(S)
        return cls("diagonal", S.n, variance=S, real_symmetric=real_symmetric)

    @classmethod
    def full(cls, kappa, flatness_bounds=None) -> "SelfEnergySpec":
        kappa = np.asarray(kappa, dtype=float)
        return cls("full", kappa.shape[0], kappa=kappa, flatness_bounds=flatness_bounds)

    def __call__(self, R):
        return apply_self_energy(self, R)


@dataclass(frozen=True, eq=False)
class SolutionMatrix:
    z: HalfPlanePoint
    M: np.ndarray
    residual: float

    @property
    def density(self) -> float:
        return float(np.trace(self.M).imag / (self.M.shape[0] * np.pi))


@dataclass(frozen=True, eq=False)
class PolarParts:
    """``M = Q Y Q*`` with ``Q = sqrt(B) W`` and ``Y`` unitary."""

    B: np.ndarray
    A_part: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True, eq=False)
class SuperOperator:
    n: int
    apply: Callable[[np.ndarray], np.ndarray]
    materialized: np.ndarray | None = None

    def __call__(self, X):
        return self.apply(np.asarray(X))

    def matrix(self) -> np.ndarray:
        if self.materialized is not None:
            return self.materialized
        if self.n > MAX_FULL_N:
            raise UnsupportedKind(f"cannot materialize superoperators with n > {MAX_FULL_N}")
        n2 = self.n * self.n
        cols = np.empty((n2, n2), dtype=complex)
        for k in range(n2):
            E = np.zeros(n2, dtype=complex)
            E[k] = 1.0
            cols[:, k] = self.apply(E.reshape(self.n, self.n)).ravel()
        return cols


# ----------------------------------------------------------------------------
# Self-energy
# ----------------------------------------------------------------------------


def apply_self_energy(spec: SelfEnergySpec, R) -> np.ndarray:
    R = np.asarray(R)
    n = spec.n
    if R.shape != (n, n):
        raise InvalidInput(f"matrix of shape {R.shape} does not match n={n}")
    if spec.kind == "isotropic":
        out = (np.trace(R) / n) * np.eye(n, dtype=np.result_type(R, float))
        if spec.real_symmetric:
            out = out + R.T / n
        return out
    if spec.kind == "diagonal":
        s = spec.variance.entries
        out = np.diag(s @ np.diag(R))
        if spec.real_symmetric:
            out = out + s * R.T
        return out
    return np.einsum("iabj,ab->ij", spec.kappa, R)


def self_energy_matrix(spec: SelfEnergySpec) -> np.ndarray:
    """``K`` with ``vec(S[R]) = K vec(R)`` (row-major vec)."""
    n = spec.n
    if n > MAX_FULL_N:
        raise UnsupportedKind(f"cannot materialize superoperators with n > {MAX_FULL_N}")
    n2 = n * n
    diag_idx = np.arange(n) * (n + 1)
    K = np.zeros((n2, n2))
    if spec.kind == "full":
        return spec.kappa.transpose(0, 3, 1, 2).reshape(n2, n2).copy()
    s = np.full((n, n), 1.0 / n) if spec.kind == "isotropic" else spec.variance.entries
    K[np.ix_(diag_idx, diag_idx)] = s
    if spec.real_symmetric:
        i, j = np.divmod(np.arange(n2), n)
        K[np.arange(n2), j * n + i] += s[i, j]
    return K


def _left_sandwich(L, K, R):
    """Matrix of ``X -> L (K X) R`` given the matrix ``K``; costs O(n^5)."""
    n = L.shape[0]
    n2 = n * n
    T = (L @ K.reshape(n, n * n2)).reshape(n, n, n2)
    T = np.swapaxes(T, 1, 2) @ R
    return np.swapaxes(T, 1, 2).reshape(n2, n2)


def _right_sandwich(K, A, B):
    """Matrix of ``X -> K (A X B)`` given the matrix ``K``; costs O(n^5)."""
    n = A.shape[0]
    n2 = n * n
    T = K.reshape(n2, n, n) @ B.T
    T = np.swapaxes(T, 1, 2) @ A
    return np.swapaxes(T, 1, 2).reshape(n2, n2)


def _random_complex(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def symmetry_defect(spec: SelfEnergySpec, rng=None, trials: int = 20) -> float:
    """Largest ``|tr(R S[T]) - tr(S[R] T)|`` over random pairs, relative to the norms."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        R, T = _random_complex(rng, spec.n), _random_complex(rng, spec.n)
        lhs = np.trace(R @ apply_self_energy(spec, T))
        rhs = np.trace(apply_self_energy(spec, R) @ T)
        scale = max(1.0, np.linalg.norm(R) * np.linalg.norm(T))
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


def _random_psd(rng, n):
    X = _random_complex(rng, n)
    return X @ X.conj().T / n


def positivity_defect(spec: SelfEnergySpec, rng=None, trials: int = 20) -> float:
    """Most negative eigenvalue of ``S[R]`` over random PSD ``R`` (0 if none)."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        out = apply_self_energy(spec, _random_psd(rng, spec.n))
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (out + out.conj().T)).min()))
    return -worst


def flatness_constants(spec: SelfEnergySpec, rng=None, trials: int = 20) -> tuple[float, float]:
    """Measured ``(c, C)`` with ``c <R> <= S[R] <= C <R>`` over random PSD ``R``."""
    rng = np.random.default_rng(rng)
    lo, hi = np.inf, 0.0
    for _ in range(trials):
        R = _random_psd(rng, spec.n)
        avg = np.trace(R).real / spec.n
        ev = np.linalg.eigvalsh(apply_self_energy(spec, R))
        lo, hi = min(lo, ev[0] / avg), max(hi, ev[-1] / avg)
    return float(lo), float(hi)


# ----------------------------------------------------------------------------
# Solver
# ----------------------------------------------------------------------------


def _im(M):
    return (M - M.conj().T) / 2j


def _min_im_eig(M) -> float:
    return float(np.linalg.eigvalsh(_im(M)).min())


def mde_residual(spec: SelfEnergySpec, a_source, z, M) -> float:
    """Operator norm of ``I + (z - A + S[M]) M``."""
    n = spec.n
    A = np.zeros((n, n)) if a_source is None else np.asarray(a_source)
    z = as_point(z).z
    D = np.eye(n) + (z * np.eye(n) - A + apply_self_energy(spec, M)) @ M
    return float(np.linalg.norm(D, 2))


def _newton_step(spec, K, A, z, M):
    n = spec.n
    I = np.eye(n)
    Wm = z * I - A + apply_self_energy(spec, M)
    R = I + Wm @ M
    if K is not None:
        J = _left_sandwich(I, K, M) + np.kron(Wm, I)
        try:
            return np.linalg.solve(J, R.ravel()).reshape(n, n)
        except np.linalg.LinAlgError:
            return None

    def matvec(v):
        D = v.reshape(n, n)
        return (apply_self_energy(spec, D) @ M + Wm @ D).ravel()

    op = LinearOperator((n * n, n * n), matvec=matvec, dtype=complex)
    delta, info = gmres(op, R.ravel(), rtol=1e-13, atol=0.0, restart=60, maxiter=50)
    return delta.reshape(n, n) if info == 0 else None


def _solve_level(spec, K, A, z, M, opts, budget):
    n = spec.n
    I = np.eye(n)
    res = mde_residual(spec, A, z, M)
    alpha = 1.0
    used = 0
    forced_newton = False
    while res > opts.tol and used < budget:
        newton = forced_newton or res <= opts.newton_switch
        if not newton:
            try:
                cand = (1 - alpha) * M - alpha * np.linalg.inv(z * I - A + apply_self_energy(spec, M))
            except np.linalg.LinAlgError:
                cand = None
        else:
            delta = _newton_step(spec, K, A, z, M)
            cand = None if delta is None else M - alpha * delta
        used += 1
        if cand is not None and _min_im_eig(cand) > 0:
            cres = mde_residual(spec, A, z, cand)
            if cres < res:
                M, res = cand, cres
                alpha = min(1.0, 2 * alpha)
                continue
        alpha *= 0.5
        if not newton and alpha < 1e-3:
            # the fixed-point map stalls near oscillatory regimes; Newton takes over
            forced_newton, alpha = True, 1.0
        elif alpha < 1e-10:
            raise LosesPositivity("damping floor reached in MDE iteration", res, M)
    return M, res, used


def solve_mde(spec: SelfEnergySpec, a_source=None, z=1j, opts: SolverOpts | None = None,
              *, M0=None) -> SolutionMatrix:
    """Solve ``I + (z - A + S[M]) M = 0`` with ``Im M > 0``.

    Damped iteration ``M <- (1-a) M - a (z - A + S[M])^{-1}`` (``a`` halved
    on residual increase or loss of positivity) with the same
    eta-continuation as the vector solver, polished by Newton steps once the
    residual is below ``opts.newton_switch`` or once the damping of the
    fixed-point step collapses. The Newton system is solved
    densely for n <= 32 and by GMRES above.
    """
    opts = opts or SolverOpts()
    z = as_point(z)
    n = spec.n
    A = np.zeros((n, n)) if a_source is None else np.asarray(a_source, dtype=complex)
    if A.shape != (n, n) or np.abs(A - A.conj().T).max() > 1e-12:
        raise InvalidInput("a_source must be a hermitian n x n matrix")
    K = self_energy_matrix(spec) if n <= 32 else None
    if M0 is not None:
        levels = [z.im]
        M = np.array(M0, dtype=complex)
    else:
        levels = [z.im] if z.im >= opts.eta_start else []
        level = opts.eta_start
        while level > z.im:
            levels.append(level)
            level *= opts.eta_factor
        if levels[-1] != z.im:
            levels.append(z.im)
        M = -np.eye(n) / complex(z.re, levels[0])
    res = np.inf
    for eta in levels:
        M, res, _ = _solve_level(spec, K, A, complex(z.re, eta), M, opts, opts.max_iter)
        if res > opts.tol:
            raise NonConvergence(f"MDE solver stalled at eta={eta:.3e}", res, M)
    M.setflags(write=False)
    return SolutionMatrix(z, M, res)


def mde_density(spec: SelfEnergySpec, a_source, grid, eta: float,
                opts: SolverOpts | None = None) -> DensityCurve:
    """``Im tr M(tau + i eta)/(n pi)`` on the grid; failed points become NaN."""
    if not eta > 0:
        raise InvalidInput("eta must be positive")
    grid = np.asarray(grid, dtype=float)
    rho = np.empty(grid.size)
    for k, tau in enumerate(grid):
        try:
            rho[k] = solve_mde(spec, a_source, HalfPlanePoint(tau, eta), opts).density
        except NonConvergence:
            rho[k] = np.nan
    return DensityCurve(grid, rho, None, float(eta), np.isfinite(rho))


# ----------------------------------------------------------------------------
# Polar decomposition and saturated superoperator
# ----------------------------------------------------------------------------


def _hfunc(H, f):
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    return (V * f(w)) @ V.conj().T


def polar_decompose(M) -> PolarParts:
    M = np.asarray(M.M if isinstance(M, SolutionMatrix) else M, dtype=complex)
    B = _im(M)
    A = (M + M.conj().T) / 2
    lam = np.linalg.eigvalsh(B)
    if lam[0] < 1e-12:
        raise IllConditioned(f"Im M has eigenvalue {lam[0]:.3e}")
    sqrtB = _hfunc(B, lambda w: np.sqrt(np.clip(w, 1e-14, None)))
    isqrtB = _hfunc(B, lambda w: 1.0 / np.sqrt(np.clip(w, 1e-14, None)))
    C = isqrtB @ A @ isqrtB
    W = _hfunc(C, lambda c: (1.0 + c * c) ** 0.25)
    Y = _hfunc(C, lambda c: (c + 1j) / np.sqrt(1.0 + c * c))
    return PolarParts(B, A, W, Y, sqrtB @ W)


def saturated_superop(spec: SelfEnergySpec, parts: PolarParts) -> SuperOperator:
    """``F[X] = Q* S[Q X Q*] Q``."""
    Q = parts.Q
    Qh = Q.conj().T

    def apply(X):
        return Qh @ apply_self_energy(spec, Q @ X @ Qh) @ Q

    mat = None
    if spec.n <= MAX_FULL_N:
        K = self_energy_matrix(spec)
        mat = _left_sandwich(Qh, _right_sandwich(K, Q, Qh), Q)
    return SuperOperator(spec.n, apply, mat)


def superop_norm_and_gap(op: SuperOperator) -> tuple[float, float, np.ndarray]:
    """Spectral norm, spectral gap and top eigenmatrix of an HS-self-adjoint superoperator.

    The eigenmatrix has unit HS norm and is rotated to positive trace.
    """
    L = op.matrix()
    w, V = np.linalg.eigh(0.5 * (L + L.conj().T))
    order = np.argsort(np.abs(w))[::-1]
    norm = float(abs(w[order[0]]))
    gap = norm - float(abs(w[order[1]])) if w.size > 1 else norm
    F = V[:, order[0]].reshape(op.n, op.n)
    tr = np.trace(F)
    if abs(tr) > 0:
        F = F * (abs(tr) / tr)
    F = 0.5 * (F + F.conj().T)
    return norm, gap, F / np.linalg.norm(F)


# ----------------------------------------------------------------------------
# Stability
# ----------------------------------------------------------------------------


def stability_apply(spec: SelfEnergySpec, M, R) -> np.ndarray:
    """``(1 - C_M S)[R] = R - M S[R] M``."""
    M = M.M if isinstance(M, SolutionMatrix) else np.asarray(M)
    return R - M @ apply_self_energy(spec, R) @ M


def stability_apply_factored(spec: SelfEnergySpec, parts: PolarParts, R) -> np.ndarray:
    """``K_Q (1 - C_Y F) K_Q^{-1} [R]`` with ``K_T[R] = T R T*`` and ``C_Y[R] = Y R Y``."""
    Q, Y = parts.Q, parts.Y
    Qi = np.linalg.inv(Q)
    X = Qi @ R @ Qi.conj().T
    Qh = Q.conj().T
    FX = Qh @ apply_self_energy(spec, Q @ X @ Qh) @ Q
    return Q @ (X - Y @ FX @ Y) @ Qh


def stability_superop(spec: SelfEnergySpec, M) -> SuperOperator:
    M = np.asarray(M.M if isinstance(M, SolutionMatrix) else M)
    mat = None
    if spec.n <= MAX_FULL_N:
        mat = np.eye(spec.n**2) - _left_sandwich(M, self_energy_matrix(spec), M)
    return SuperOperator(spec.n, lambda R: stability_apply(spec, M, R), mat)


def stability_inverse_norm_mde(spec: SelfEnergySpec, M) -> float:
    """``||(1 - C_M S)^{-1}||`` on the n^2-dimensional matrix space (HS geometry)."""
    L = stability_superop(spec, M).matrix()
    smin = float(np.linalg.svd(L, compute_uv=False)[-1])
    if smin < 1e-14:
        raise SingularStability(f"smallest singular value {smin:.3e}")
    return 1.0 / smin


def stability_factorization(spec: SelfEnergySpec, M) -> dict:
    """Factored bound ``||K_Q|| ||(1 - C_Y F)^{-1}|| ||K_Q^{-1}||`` and its pieces."""
    parts = polar_decompose(M)
    Q, Y = parts.Q, parts.Y
    KQ = np.kron(Q, Q.conj())
    KQi = np.linalg.inv(KQ)
    F = saturated_superop(spec, parts).matrix()
    inner = np.eye(spec.n**2) - _left_sandwich(Y, F, Y)
    s_inner = np.linalg.svd(inner, compute_uv=False)[-1]
    if s_inner < 1e-14:
        raise SingularStability(f"smallest singular value {s_inner:.3e}")
    kq, kqi = np.linalg.norm(KQ, 2), np.linalg.norm(KQi, 2)
    return {
        "kq_norm": float(kq),
        "inner_inverse_norm": float(1.0 / s_inner),
        "kq_inverse_norm": float(kqi),
        "factored_bound": float(kq * kqi / s_inner),
        "direct": stability_inverse_norm_mde(spec, M),
    }
