"""Exact Kalman-filter recursion, used as the optimality oracle.

One step advances the posterior (x̂(t−1|t−1), N_{t−1}) to (x̂(t|t), N_t):

    x̂(t|t−1) = F x̂(t−1|t−1)
    M_t      = F N_{t−1} Fᵀ + Pi
    K^f_t    = M_t Hᵀ (H M_t Hᵀ + Sigma)⁻¹
    x̂(t|t)   = x̂(t|t−1) + K^f_t (y_t − H x̂(t|t−1))
    N_t      = (I − K^f_t H) M_t

K^f is called the filter gain and K^p = F K^f the prediction gain throughout.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from src.lds import DimensionMismatch, LdsModel, validate_model
from src.linalg import inf_norm, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10**6


class InnovationCovSingular(np.linalg.LinAlgError):
    """Raised when H M Hᵀ + Sigma has no Cholesky factor."""


class NoConvergence(RuntimeError):
    """Raised when the steady-state iteration hits max_iter."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"steady-state gain did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class KalmanState:
    x_post: np.ndarray
    N: np.ndarray
    M: np.ndarray
    Kf: np.ndarray
    t: int = 0


class SteadyState(NamedTuple):
    Kf: np.ndarray
    M: np.ndarray
    N: np.ndarray
    iterations: int
    residual: float


def initial_state(
    model: LdsModel,
    x0: np.ndarray | None = None,
    N0: np.ndarray | None = None,
) -> KalmanState:
    """Posterior at t = 0; defaults to a zero mean and identity covariance."""
    n, p = model.n, model.p
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    N = np.eye(n) if N0 is None else np.atleast_2d(np.asarray(N0, dtype=float))
    if N.shape != (n, n):
        raise DimensionMismatch(f"N0 must be {n}x{n}, got shape {N.shape}")
    return KalmanState(x_post=x, N=N, M=N.copy(), Kf=np.zeros((n, p)), t=0)


def _covariance_step(N_prev: np.ndarray, model: LdsModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance N_{t−1} to (M_t, K^f_t, N_t)."""
    F, H = model.F, model.H
    M = symmetrize(F @ N_prev @ F.T + model.Pi)
    S = symmetrize(H @ M @ H.T + model.Sigma)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovSingular(f"innovation covariance is not positive definite: {exc}") from exc
    # K = M Hᵀ S⁻¹ = (S⁻¹ H M)ᵀ since S and M are symmetric
    Kf = scipy.linalg.cho_solve(factor, H @ M).T
    N = symmetrize((np.eye(model.n) - Kf @ H) @ M)
    return M, Kf, N


def kf_step(prev: KalmanState, y: np.ndarray, model: LdsModel) -> KalmanState:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (model.p,):
        raise DimensionMismatch(f"observation must have length {model.p}, got {y.shape[0]}")
    M, Kf, N = _covariance_step(prev.N, model)
    x_prior = model.F @ prev.x_post
    x_post = x_prior + Kf @ (y - model.H @ x_prior)
    return KalmanState(x_post=x_post, N=N, M=M, Kf=Kf, t=prev.t + 1)


def filter_trajectory(
    model: LdsModel,
    ys: Iterable[np.ndarray],
    init: KalmanState,
) -> list[KalmanState]:
    """Fold kf_step over ``ys``; the result starts with ``init``."""
    validate_model(model)
    states = [init]
    for y in ys:
        states.append(kf_step(states[-1], y, model))
    return states


def filter_equation(
    prev_post: np.ndarray,
    y: np.ndarray,
    Kf: np.ndarray,
    model: LdsModel,
) -> np.ndarray:
    """x̂(t+1|t+1) = F x̂(t|t) + K^f_{t+1} (y_{t+1} − H F x̂(t|t))."""
    predicted = model.F @ prev_post
    return predicted + Kf @ (np.asarray(y, dtype=float) - model.H @ predicted)


def prediction_gain(Kf: np.ndarray, model: LdsModel) -> np.ndarray:
    """K^p = F K^f."""
    Kf = np.atleast_2d(Kf)
    if Kf.shape != (model.n, model.p):
        raise DimensionMismatch(f"filter gain must be {model.n}x{model.p}, got shape {Kf.shape}")
    return model.F @ Kf


def predict_step(
    x_prior: np.ndarray,
    y: np.ndarray,
    Kp: np.ndarray,
    model: LdsModel,
) -> np.ndarray:
    """x̂(t+1|t) = F x̂(t|t−1) + K^p (y_t − H x̂(t|t−1))."""
    x_prior = np.asarray(x_prior, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    Kp = np.atleast_2d(Kp)
    if x_prior.shape != (model.n,):
        raise DimensionMismatch(f"state must have length {model.n}, got {x_prior.shape[0]}")
    if y.shape != (model.p,):
        raise DimensionMismatch(f"observation must have length {model.p}, got {y.shape[0]}")
    if Kp.shape != (model.n, model.p):
        raise DimensionMismatch(f"prediction gain must be {model.n}x{model.p}, got shape {Kp.shape}")
    return model.F @ x_prior + Kp @ (y - model.H @ x_prior)


def predicted_observation(state: KalmanState, model: LdsModel) -> np.ndarray:
    """One-step observation forecast H F x̂(t|t) for the next measurement."""
    return model.H @ (model.F @ state.x_post)


# ---------------------------------------------------------------------------
# Steady state
# ---------------------------------------------------------------------------

def steady_state_gain(
    model: LdsModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    N0: np.ndarray | None = None,
) -> SteadyState:
    """Iterate the covariance recursion from N0 (default I) to its fixed point.

    Stops once ‖K_{k+1} − K_k‖_∞ < tol.
    """
    validate_model(model)
    N = np.eye(model.n) if N0 is None else np.atleast_2d(np.asarray(N0, dtype=float))
    K_prev = None
    residual = float("inf")
    for iteration in range(1, max_iter + 1):
        M, Kf, N = _covariance_step(N, model)
        if K_prev is not None:
            residual = inf_norm(Kf - K_prev)
            if residual < tol:
                logger.debug("Steady-state gain converged in %d iterations", iteration)
                return SteadyState(Kf=Kf, M=M, N=N, iterations=iteration, residual=residual)
        K_prev = Kf
    raise NoConvergence(max_iter, residual)


def riccati_prior_covariance(model: LdsModel) -> np.ndarray:
    """Steady-state prior covariance M* from scipy's DARE solver."""
    return scipy.linalg.solve_discrete_are(model.F.T, model.H.T, model.Pi, model.Sigma)


def gain_error_history(
    model: LdsModel,
    steps: int,
    N0: np.ndarray | None = None,
    K_star: np.ndarray | None = None,
) -> np.ndarray:
    """‖K^f_t − K^f*‖_∞ for t = 1..steps, starting the recursion at N0."""
    if K_star is None:
        K_star = steady_state_gain(model).Kf
    N = np.eye(model.n) if N0 is None else np.atleast_2d(np.asarray(N0, dtype=float))
    errors = np.empty(steps)
    for t in range(steps):
        _, Kf, N = _covariance_step(N, model)
        errors[t] = inf_norm(Kf - K_star)
    return errors


def gain_sequence(
    model: LdsModel,
    steps: int,
    N0: np.ndarray | None = None,
) -> np.ndarray:
    """Filter gains K^f_t for t = 0..steps−1, shape (steps, n, p).

    The covariance recursion does not depend on the data, so every run of an
    experiment shares one sequence. Once an iteration reproduces (K^f, N)
    exactly, the remaining entries are filled with that fixed point.
    """
    validate_model(model)
    N = np.eye(model.n) if N0 is None else np.atleast_2d(np.asarray(N0, dtype=float))
    if N.shape != (model.n, model.n):
        raise DimensionMismatch(f"N0 must be {model.n}x{model.n}, got shape {N.shape}")
    gains = np.empty((steps, model.n, model.p))
    for t in range(steps):
        _, Kf, N_next = _covariance_step(N, model)
        gains[t] = Kf
        if t > 0 and np.array_equal(Kf, gains[t - 1]) and np.array_equal(N_next, N):
            gains[t + 1:] = Kf
            break
        N = N_next
    return gains
