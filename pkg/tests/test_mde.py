import numpy as np
import pytest

from dysonlab.errors import IllConditioned, InvalidInput, UnsupportedKind
from dysonlab.mde import (
    SelfEnergySpec,
    SuperOperator,
    apply_self_energy,
    flatness_constants,
    mde_density,
    mde_residual,
    polar_decompose,
    positivity_defect,
    saturated_superop,
    solve_mde,
    stability_apply,
    stability_apply_factored,
    stability_factorization,
    stability_inverse_norm_mde,
    superop_norm_and_gap,
    symmetry_defect,
)
from dysonlab.vde import (
    VarianceMatrix,
    msc,
    saturated_f,
    sc_density,
    solve_vde,
    stability_inverse_norm,
)

from conftest import random_full_kappa, random_variance

M_I = msc(1j)


@pytest.fixture
def full_spec(rng):
    return SelfEnergySpec.full(random_full_kappa(rng, 5))


def _rand(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


class TestSelfEnergy:
    def test_isotropic_identity(self):
        assert np.allclose(apply_self_energy(SelfEnergySpec.isotropic(6), np.eye(6)), np.eye(6))

    def test_diagonal_wigner(self, rng):
        v = rng.standard_normal(8)
        out = apply_self_energy(SelfEnergySpec.diagonal(VarianceMatrix.wigner(8)), np.diag(v))
        assert np.allclose(out, v.mean() * np.eye(8), atol=1e-15)

    def test_real_symmetric_isotropic_adds_transpose(self, rng):
        R = _rand(rng, 4)
        out = apply_self_energy(SelfEnergySpec.isotropic(4, real_symmetric=True), R)
        assert np.allclose(out, np.trace(R) / 4 * np.eye(4) + R.T / 4)

    def test_full_matches_expectation_definition(self, rng):
        n = 4
        G = rng.standard_normal((3, n, n))
        G = G + G.transpose(0, 2, 1)
        kappa = np.einsum("cij,ckl->ijkl", G, G)
        R = _rand(rng, n)
        # E[H R H] with H = sum_c xi_c G_c is sum_c G_c R G_c
        expected = sum(g @ R @ g for g in G)
        assert np.allclose(apply_self_energy(SelfEnergySpec.full(kappa), R), expected)

    def test_symmetric_and_positive(self, full_spec):
        assert symmetry_defect(full_spec) <= 1e-12
        assert positivity_defect(full_spec) >= -1e-12

    def test_full_kind_size_cap(self):
        with pytest.raises(UnsupportedKind):
            SelfEnergySpec("full", 65, kappa=np.zeros((1, 1, 1, 1)))
        with pytest.raises(InvalidInput):
            SelfEnergySpec.full(np.zeros((2, 2, 2, 3)))
        with pytest.raises(UnsupportedKind):
            SelfEnergySpec("banded", 3)

    def test_flatness_isotropic(self):
        c, C = flatness_constants(SelfEnergySpec.isotropic(5, real_symmetric=True))
        assert c >= 1 - 1e-12 and C <= 2 + 1e-12


class TestSolver:
    @pytest.mark.parametrize("z", [1j, 0.5 + 0.01j, -1.7 + 1e-3j, 3 + 0.1j])
    def test_isotropic_is_semicircle(self, z):
        sol = solve_mde(SelfEnergySpec.isotropic(4), None, z)
        assert np.abs(sol.M - msc(z) * np.eye(4)).max() <= 1e-10

    def test_diagonal_matches_vector_equation(self, rng):
        S = random_variance(rng, 8)
        z = 0.3 + 0.05j
        M = solve_mde(SelfEnergySpec.diagonal(S), None, z).M
        assert np.abs(np.diag(M) - solve_vde(S, z).m).max() <= 1e-9
        assert np.abs(M - np.diag(np.diag(M))).max() <= 1e-10

    def test_far_from_axis(self, full_spec):
        assert np.linalg.norm(solve_mde(full_spec, None, 10j).M, 2) <= 0.1

    def test_residual_and_positivity(self, full_spec):
        z = 0.1 + 0.02j
        sol = solve_mde(full_spec, None, z)
        assert sol.residual <= 1e-10
        assert mde_residual(full_spec, None, z, sol.M) == pytest.approx(sol.residual)
        assert np.linalg.eigvalsh((sol.M - sol.M.conj().T) / 2j).min() > 0

    def test_nonzero_source_smoke(self):
        A = np.diag([0.5, -0.5, 0.2, 0.0])
        sol = solve_mde(SelfEnergySpec.isotropic(4), A, 0.1 + 0.05j)
        assert sol.residual <= 1e-10
        assert np.linalg.eigvalsh((sol.M - sol.M.conj().T) / 2j).min() > 0

    def test_normalization_at_infinity(self, full_spec):
        eta = 100.0
        M = solve_mde(full_spec, None, 1j * eta).M
        assert abs(-1j * eta * np.trace(M) / 5 - 1) <= 1e-2

    def test_inverse_bound(self):
        spec = SelfEnergySpec.diagonal(VarianceMatrix.four_block(0.07, 8))
        for tau in np.linspace(-1.5, 1.5, 7):
            z = complex(tau, 1e-3)
            M = solve_mde(spec, None, z).M
            assert np.linalg.norm(M, "fro") / np.sqrt(8) <= 5
            assert np.linalg.norm(np.linalg.inv(M), 2) <= 5 * (1 + abs(z))

    def test_im_part_comparable_to_density(self, full_spec):
        for tau in (-0.5, 0.0, 0.4):
            sol = solve_mde(full_spec, None, complex(tau, 1e-3))
            ev = np.linalg.eigvalsh((sol.M - sol.M.conj().T) / 2j)
            rho = sol.density
            assert 0.1 * rho <= ev.min() and ev.max() <= 10 * rho


class TestDensity:
    def test_isotropic_semicircle(self):
        grid = np.linspace(-2.5, 2.5, 11)
        d = mde_density(SelfEnergySpec.isotropic(2), None, grid, 1e-3)
        ref = np.array([msc(complex(t, 1e-3)).imag / np.pi for t in grid])
        assert np.abs(d.rho - ref).max() <= 1e-10

    def test_block_matrix_matches_vector_density(self):
        S = VarianceMatrix.four_block(0.07, 4)
        grid = np.linspace(-2, 2, 9)
        a = mde_density(SelfEnergySpec.diagonal(S), None, grid, 1e-2)
        b = sc_density(S, grid, 1e-2)
        assert np.abs(a.rho - b.rho).max() <= 1e-8

    def test_total_mass(self):
        grid = np.linspace(-3, 3, 601)
        assert abs(mde_density(SelfEnergySpec.isotropic(1), None, grid, 1e-3).mass - 1) <= 1e-2


class TestPolar:
    def test_pure_imaginary_identity(self):
        p = polar_decompose(1j * np.eye(3))
        for X, ref in ((p.B, np.eye(3)), (p.W, np.eye(3)), (p.Y, 1j * np.eye(3)), (p.Q, np.eye(3))):
            assert np.allclose(X, ref, atol=1e-15)

    def test_scalar_semicircle(self):
        p = polar_decompose(M_I * np.eye(2))
        assert np.allclose(p.Y, M_I / abs(M_I) * np.eye(2))
        assert np.allclose(p.Q, np.sqrt(abs(M_I)) * np.eye(2))

    def test_reconstruction(self, full_spec):
        M = solve_mde(full_spec, None, 0.5 + 0.2j).M
        p = polar_decompose(M)
        assert np.linalg.norm(p.Q @ p.Y @ p.Q.conj().T - M, 2) <= 1e-10
        assert np.linalg.norm(p.Y.conj().T @ p.Y - np.eye(5), 2) <= 1e-10
        assert np.allclose(p.W, p.W.conj().T) and np.linalg.eigvalsh(p.W).min() > 0

    def test_ill_conditioned(self):
        with pytest.raises(IllConditioned):
            polar_decompose(np.eye(2) + 1e-14j * np.eye(2))


class TestSaturated:
    def test_isotropic_rank_one(self, rng):
        spec = SelfEnergySpec.isotropic(4)
        F = saturated_superop(spec, polar_decompose(M_I * np.eye(4)))
        X = _rand(rng, 4)
        assert np.allclose(F(X), abs(M_I) ** 2 * np.trace(X) / 4 * np.eye(4))
        norm, gap, E = superop_norm_and_gap(F)
        assert norm == pytest.approx(abs(M_I) ** 2, abs=1e-12)
        assert gap == pytest.approx(norm, abs=1e-12)
        assert np.allclose(E, np.eye(4) / 2, atol=1e-12)

    def test_identity_superoperator(self):
        op = SuperOperator(3, lambda X: X, np.eye(9))
        norm, gap, _ = superop_norm_and_gap(op)
        assert norm == pytest.approx(1.0) and gap == pytest.approx(0.0, abs=1e-12)

    def test_self_adjoint_and_positive(self, full_spec, rng):
        F = saturated_superop(full_spec, polar_decompose(solve_mde(full_spec, None, 0.2 + 0.1j).M))
        Fm = F.matrix()
        # HS self-adjointness in the row-major vectorization
        assert np.abs(Fm - Fm.conj().T).max() <= 1e-10
        for _ in range(5):
            X = _rand(rng, 5)
            P = X @ X.conj().T
            assert np.linalg.eigvalsh((F(P) + F(P).conj().T) / 2).min() >= -1e-12
        norm, gap, E = superop_norm_and_gap(F)
        assert norm < 1 and gap > 0
        assert np.linalg.eigvalsh(E).min() >= -1e-12

    def test_linearity(self, full_spec, rng):
        F = saturated_superop(full_spec, polar_decompose(solve_mde(full_spec, None, 1j).M))
        X, Y = _rand(rng, 5), _rand(rng, 5)
        a = 0.3 - 1.1j
        assert np.abs(F(a * X + Y) - a * F(X) - F(Y)).max() <= 1e-12

    def test_diagonal_matches_vector_norm(self, rng):
        S = random_variance(rng, 6)
        z = -0.2 + 0.05j
        M = solve_mde(SelfEnergySpec.diagonal(S), None, z).M
        norm, _, _ = superop_norm_and_gap(saturated_superop(SelfEnergySpec.diagonal(S), polar_decompose(M)))
        assert abs(norm - saturated_f(S, solve_vde(S, z)).norm) <= 1e-10

    @pytest.mark.parametrize("which", ["full", "block"])
    def test_fixed_point_at_small_eta(self, which, full_spec):
        spec = full_spec if which == "full" else SelfEnergySpec.diagonal(VarianceMatrix.four_block(0.07, 8))
        tau = 0.2 if which == "full" else 1.0
        p = polar_decompose(solve_mde(spec, None, complex(tau, 1e-6)).M)
        X = np.linalg.solve(p.Q, p.B) @ np.linalg.inv(p.Q.conj().T)
        assert np.linalg.norm(X - saturated_superop(spec, p)(X)) <= 1e-4


class TestStability:
    def test_isotropic_at_i(self):
        M = solve_mde(SelfEnergySpec.isotropic(3), None, 1j).M
        val = stability_inverse_norm_mde(SelfEnergySpec.isotropic(3), M)
        S = VarianceMatrix.wigner(3)
        assert val == pytest.approx(stability_inverse_norm(S, solve_vde(S, 1j)), abs=1e-10)
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_bulk_finite(self, full_spec):
        M = solve_mde(full_spec, None, 0.0 + 1e-3j).M
        assert stability_inverse_norm_mde(full_spec, M) <= 1e4

    def test_edge_approach_monotone(self):
        spec = SelfEnergySpec.isotropic(2)
        vals = [stability_inverse_norm_mde(spec, solve_mde(spec, None, complex(2.0, eta)).M)
                for eta in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_factored_identity(self, full_spec, rng):
        M = solve_mde(full_spec, None, 0.3 + 0.05j).M
        p = polar_decompose(M)
        for _ in range(10):
            R = _rand(rng, 5)
            a = stability_apply(full_spec, M, R)
            b = stability_apply_factored(full_spec, p, R)
            assert np.abs(a - b).max() <= 1e-10

    def test_factorization_bounds_direct(self, full_spec):
        M = solve_mde(full_spec, None, 0.2 + 0.01j).M
        info = stability_factorization(full_spec, M)
        assert info["direct"] <= info["factored_bound"] * (1 + 1e-10)
