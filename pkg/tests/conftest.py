import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("dysonlab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("dysonlab")


def random_variance(rng, n, low=0.1, high=2.0):
    """Symmetric matrix with entries in [low, high] / n."""
    X = rng.uniform(low, high, (n, n))
    return (X + X.T) / (2 * n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_full_kappa(rng, n, rank=None, scale=1.0):
    """``E h_ij h_kl`` for a real symmetric Gaussian H = sum_c xi_c G_c with
    random symmetric G_c, so the tensor is a valid covariance by construction."""
    rank = rank or n * (n + 1) // 2
    G = rng.standard_normal((rank, n, n))
    G = (G + G.transpose(0, 2, 1)) / 2 * np.sqrt(scale / (n * rank))
    return np.einsum("cij,ckl->ijkl", G, G)
