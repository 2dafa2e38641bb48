"""Shared models and generators for the library tests."""
import numpy as np
import pytest
from scipy.stats import ortho_group

from src.lds import LdsModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def scalar_model():
    return LdsModel.from_lists(1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def tracking_model():
    """Slow 2D drift observed through its first coordinate."""
    return LdsModel.from_lists(
        [[0.9, 0.1], [0.0, 0.9]],
        [[1.0, 0.0]],
        0.1 * np.eye(2),
        [[1.0]],
    )


@pytest.fixture
def ray_model():
    """Two decoupled stable modes, fully observed, unit noise."""
    return LdsModel.from_lists(np.diag([0.9, 0.5]), np.eye(2), np.eye(2), np.eye(2))


@pytest.fixture
def make_stable_model():
    """Factory for random stable models with separated real eigenvalues."""

    def make(rng, n, p, pi_scale=1e-3):
        Q = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
        eigvals = np.sort(rng.uniform(0.88, 0.96, size=n))
        F = Q @ np.diag(eigvals) @ Q.T
        H = rng.standard_normal((p, n))
        return LdsModel.from_lists(F, H, pi_scale * np.eye(n), np.eye(p))

    return make
