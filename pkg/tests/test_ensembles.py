import numpy as np
import pytest

from dysonlab.ensembles import (
    LAW_FOURTH_MOMENT,
    EnsembleSpec,
    analytic_self_energy,
    covariance_factorize,
    empirical_self_energy,
    sample,
    sample_one,
    wigner_kappa,
)
from dysonlab.errors import InvalidCovariance, InvalidInput
from dysonlab.mde import SelfEnergySpec, apply_self_energy
from dysonlab.vde import VarianceMatrix

from conftest import random_full_kappa


def test_wigner_second_moment():
    H = sample_one(EnsembleSpec(500), 11, 0)
    assert abs(H.mean()) <= 4 / 500
    assert 0.9 <= np.trace(H @ H) / 500 <= 1.1


@pytest.mark.parametrize("symmetry", ["real_symmetric", "complex_hermitian"])
def test_exactly_hermitian(symmetry):
    H = sample_one(EnsembleSpec(30, symmetry), 3, 2)
    assert np.array_equal(H, H.conj().T)
    assert np.all(np.imag(np.diag(H)) == 0)


def test_rademacher_values():
    n = 40
    H = sample_one(EnsembleSpec(n, entry_law="rademacher"), 5, 0)
    off = H[~np.eye(n, dtype=bool)]
    assert np.allclose(np.abs(off), 1 / np.sqrt(n))


def test_generalized_wigner_row_variances():
    S = VarianceMatrix.from_blocks([[0.5, 1.5], [1.5, 0.5]], 20)
    spec = EnsembleSpec(20, kind="generalized_wigner", variance=S)
    batch = np.array(sample(spec, 9, 200).matrices)
    off = ~np.eye(20, dtype=bool)
    sq = np.where(off, batch**2, 0.0).sum(axis=2)  # per-sample off-diagonal row sums
    expect = np.where(off, S.entries, 0.0).sum(axis=1)
    se = sq.std(axis=0, ddof=1) / np.sqrt(200)
    assert np.all(np.abs(sq.mean(axis=0) - expect) <= 3.5 * se)


def test_generalized_wigner_needs_doubly_stochastic():
    with pytest.raises(InvalidInput):
        EnsembleSpec(8, kind="generalized_wigner", variance=VarianceMatrix.four_block(0.07, 8))


def test_correlated_requires_gaussian(rng):
    se = SelfEnergySpec.full(random_full_kappa(rng, 3))
    with pytest.raises(InvalidInput):
        EnsembleSpec(3, kind="gaussian_correlated", self_energy=se, entry_law="uniform")


def test_bit_identical_and_thread_independent():
    spec = EnsembleSpec(25, "complex_hermitian", entry_law="uniform")
    a = sample(spec, 123, 4, threads=1)
    b = sample(spec, 123, 4, threads=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_different_seeds_uncorrelated():
    spec = EnsembleSpec(100)
    a, b = sample_one(spec, 1, 0), sample_one(spec, 2, 0)
    assert abs(np.corrcoef(a.ravel(), b.ravel())[0, 1]) <= 0.1


@pytest.mark.parametrize("law", ["gaussian", "rademacher", "uniform"])
def test_fourth_moment_proxy(law):
    n = 60
    H = np.array(sample(EnsembleSpec(n, entry_law=law), 4, 5).matrices)
    off = H[:, ~np.eye(n, dtype=bool)] * np.sqrt(n)
    assert np.mean(off**4) <= 3 * LAW_FOURTH_MOMENT[law]


class TestSelfEnergy:
    def test_goe_identity(self):
        # real symmetric class: S[I] = <I> I + I/n
        spec = EnsembleSpec(20)
        est, err = empirical_self_energy(spec, np.eye(20), 400, 8)
        exact = (1 + 1 / 20) * np.eye(20)
        assert np.allclose(analytic_self_energy(spec, np.eye(20)), exact)
        assert np.mean(np.abs(est - exact) <= 3 * err + 1e-12) >= 0.98

    def test_zero_input(self):
        est, err = empirical_self_energy(EnsembleSpec(6), np.zeros((6, 6)), 100, 1)
        assert np.all(est == 0) and np.all(err == 0)

    def test_count_guard(self):
        with pytest.raises(InvalidInput):
            empirical_self_energy(EnsembleSpec(4), np.eye(4), 99, 0)

    def test_correlated_matches_analytic(self, rng):
        kappa = random_full_kappa(rng, 4)
        spec = EnsembleSpec(4, kind="gaussian_correlated", self_energy=SelfEnergySpec.full(kappa))
        R = rng.standard_normal((4, 4))
        est, err = empirical_self_energy(spec, R, 4000, 3)
        exact = apply_self_energy(spec.self_energy, R)
        assert np.mean(np.abs(est - exact) <= 3 * err) >= 0.9


class TestCovariance:
    def test_wigner_factor_is_diagonal(self):
        n = 4
        fac = covariance_factorize(wigner_kappa(VarianceMatrix.wigner(n)), "real_symmetric")
        F = fac.factor
        assert np.allclose(F, np.diag(np.diag(F)))
        diag_entry = fac.rows == fac.cols
        assert np.allclose(np.diag(F)[~diag_entry], 1 / np.sqrt(n))
        assert np.allclose(np.diag(F)[diag_entry], np.sqrt(2 / n))

    def test_complex_wigner_factor(self):
        n = 3
        fac = covariance_factorize(wigner_kappa(VarianceMatrix.wigner(n), "complex_hermitian"),
                                   "complex_hermitian")
        d = np.diag(fac.factor)
        p = fac.rows.size
        diag_entry = fac.rows == fac.cols
        assert np.allclose(d[:p][diag_entry], 1 / np.sqrt(n))
        assert np.allclose(d[:p][~diag_entry], 1 / np.sqrt(2 * n))
        assert np.allclose(d[p:], 1 / np.sqrt(2 * n))

    def test_rank_deficient(self, rng):
        fac = covariance_factorize(random_full_kappa(rng, 4, rank=2))
        assert np.linalg.matrix_rank(fac.factor, tol=1e-8) == 2

    def test_negative_eigenvalue(self):
        kappa = wigner_kappa(VarianceMatrix.wigner(3))
        kappa[0, 1, 0, 1] = kappa[1, 0, 1, 0] = kappa[0, 1, 1, 0] = kappa[1, 0, 0, 1] = -0.1
        with pytest.raises(InvalidCovariance) as err:
            covariance_factorize(kappa)
        assert err.value.min_eigenvalue == pytest.approx(-0.1)

    def test_round_trip_covariance(self, rng):
        kappa = random_full_kappa(rng, 3)
        spec = EnsembleSpec(3, kind="gaussian_correlated", self_energy=SelfEnergySpec.full(kappa))
        H = np.array(sample(spec, 17, 10_000).matrices)
        emp = np.einsum("sij,skl->ijkl", H, H) / len(H)
        prod = np.einsum("sij,skl->sijkl", H, H)
        se = prod.std(axis=0, ddof=1) / np.sqrt(len(H))
        assert np.all(np.abs(emp - kappa) <= 4 * se + 1e-12)
