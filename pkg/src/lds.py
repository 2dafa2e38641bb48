"""Linear dynamical system models and ground-truth simulation.

The generative model is

    x_{t+1} = F x_t + m_t,   m_t ~ N(0, Pi)
    y_t     = H x_t + n_t,   n_t ~ N(0, Sigma)

with independent noise processes. ``simulate`` derives three sub-streams from
one seed (initial state, process noise, observation noise) so that changing the
horizon never shifts one stream relative to another.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from src.linalg import PSD_TOL, SYMMETRY_TOL, is_symmetric, min_eigenvalue, symmetrize

logger = logging.getLogger(__name__)


class ModelError(ValueError):
    """Raised when an LdsModel violates its invariants."""


class DimensionMismatch(ModelError):
    """Raised when matrix shapes disagree with each other or with (n, p)."""


class NotSymmetric(ModelError):
    """Raised when a covariance matrix is not symmetric."""


class NotPsd(ModelError):
    """Raised when a covariance matrix has a negative eigenvalue."""


class SigmaSingular(ModelError):
    """Raised when the observation-noise covariance is not positive definite."""


@dataclass(frozen=True)
class LdsModel:
    F: np.ndarray
    H: np.ndarray
    Pi: np.ndarray
    Sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @classmethod
    def from_lists(cls, F, H, Pi, Sigma) -> LdsModel:
        """Build a model from nested lists (or scalars), coercing to 2-D float arrays."""
        return cls(
            F=np.atleast_2d(np.asarray(F, dtype=float)),
            H=np.atleast_2d(np.asarray(H, dtype=float)),
            Pi=np.atleast_2d(np.asarray(Pi, dtype=float)),
            Sigma=np.atleast_2d(np.asarray(Sigma, dtype=float)),
        )


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    @property
    def T(self) -> int:
        return self.states.shape[0]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_covariance(name: str, cov: np.ndarray) -> None:
    if not is_symmetric(cov, SYMMETRY_TOL):
        raise NotSymmetric(f"{name} is not symmetric (tolerance {SYMMETRY_TOL:g})")
    lam_min = min_eigenvalue(cov)
    if lam_min < -PSD_TOL:
        raise NotPsd(f"{name} has smallest eigenvalue {lam_min:.3e} < -{PSD_TOL:g}")


def validate_model(model: LdsModel, require_sigma_pd: bool = True) -> LdsModel:
    """Return ``model`` unchanged if all LdsModel invariants hold.

    ``require_sigma_pd=False`` admits a singular Sigma; this is only meaningful
    for simulation, every filter inverts H M Hᵀ + Sigma.
    """
    F, H, Pi, Sigma = model.F, model.H, model.Pi, model.Sigma
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionMismatch(f"F must be square, got shape {F.shape}")
    n = F.shape[0]
    if H.ndim != 2 or H.shape[1] != n:
        raise DimensionMismatch(f"H must have {n} columns, got shape {H.shape}")
    p = H.shape[0]
    if Pi.shape != (n, n):
        raise DimensionMismatch(f"Pi must be {n}x{n}, got shape {Pi.shape}")
    if Sigma.shape != (p, p):
        raise DimensionMismatch(f"Sigma must be {p}x{p}, got shape {Sigma.shape}")

    _check_covariance("Pi", Pi)
    _check_covariance("Sigma", Sigma)
    if require_sigma_pd:
        lam_min = min_eigenvalue(Sigma)
        if lam_min <= 0.0:
            raise SigmaSingular(
                f"Sigma must be positive definite, smallest eigenvalue is {lam_min:.3e}"
            )
    return model


# ---------------------------------------------------------------------------
# Gaussian sampling
# ---------------------------------------------------------------------------

def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric factor L with L Lᵀ = cov, tolerating boundary-PSD inputs.

    Eigenvalues in (-1e-12, 0) are clipped to zero. Coordinates with exactly
    zero variance get an all-zero row, so they are exactly zero in every draw.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not is_symmetric(cov, SYMMETRY_TOL):
        raise NotSymmetric("covariance is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(symmetrize(cov))
    if eigvals.size and eigvals[0] < -PSD_TOL:
        raise NotPsd(f"covariance has smallest eigenvalue {eigvals[0]:.3e}")
    factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    factor[np.diag(cov) == 0.0, :] = 0.0
    return factor


def sample_gaussian(
    cov: np.ndarray,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Zero-mean Gaussian draw(s) with covariance ``cov``.

    Returns a vector when ``size`` is None, otherwise a (size, d) array whose
    rows are the draws a sequence of single calls would have produced.
    """
    factor = gaussian_factor(cov)
    d = factor.shape[0]
    if size is None:
        return factor @ rng.standard_normal(d)
    return rng.standard_normal((size, d)) @ factor.T


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def noise_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """The (initial state, process noise, observation noise) generators for ``seed``."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(child) for child in children)


def simulate(
    model: LdsModel,
    T: int,
    seed: int,
    x0: np.ndarray | None = None,
    x0_cov: np.ndarray | None = None,
) -> Trajectory:
    """Run the generative model forward for ``T`` steps.

    ``x0=None`` draws the initial hidden state from N(0, x0_cov), with
    ``x0_cov`` defaulting to the identity.
    """
    validate_model(model, require_sigma_pd=False)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    n, p = model.n, model.p
    init_rng, process_rng, obs_rng = noise_streams(seed)

    if x0 is None:
        cov = np.eye(n) if x0_cov is None else np.atleast_2d(np.asarray(x0_cov, dtype=float))
        if cov.shape != (n, n):
            raise DimensionMismatch(f"x0_cov must be {n}x{n}, got shape {cov.shape}")
        x = sample_gaussian(cov, init_rng)
    else:
        x = np.asarray(x0, dtype=float).reshape(-1)
        if x.shape != (n,):
            raise DimensionMismatch(f"x0 must have length {n}, got {x.shape[0]}")

    process_noise = sample_gaussian(model.Pi, process_rng, size=T)
    obs_noise = sample_gaussian(model.Sigma, obs_rng, size=T)

    states = np.empty((T, n))
    for t in range(T):
        states[t] = x
        x = model.F @ x + process_noise[t]
    observations = states @ model.H.T + obs_noise
    logger.debug("Simulated %d steps (n=%d, p=%d, seed=%d)", T, n, p, seed)
    return Trajectory(states=states, observations=observations, seed=seed)


def stationary_covariance(model: LdsModel) -> np.ndarray:
    """Fixed point P = F P Fᵀ + Pi of the state covariance (requires stable F)."""
    return scipy.linalg.solve_discrete_lyapunov(model.F, model.Pi)
