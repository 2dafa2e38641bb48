"""Local Kalman-gain adaptation by the recursive prediction error method.

The prediction gain is parametrised as K(θ) = exp(θ)·K₀, so dK/dθ = K and the
θ step becomes a multiplicative (exponentiated gradient) update of every gain
entry. One step, in order, given x̂(t), ŵ(t), θ(t), Λ̂⁻¹(t):

    ŷ(t)     = H x̂(t)
    ε(t)     = y(t) − ŷ(t)
    x̂(t+1)   = F x̂(t) + K(θ) ε(t)
    v̂(t)     = H ŵ(t)
    ŵ(t+1)   = K(θ) ε(t) + (F − K(θ) H) ŵ(t)
    θ(t+1)   = θ(t) + γ(t) v̂(t)ᵀ Λ̂⁻¹(t) ε(t)
    Λ̂ or Λ̂⁻¹ advanced last (signal-Hebbian direct rule or its stable inverse form)

ŵ is the sensitivity ∂x̂/∂θ. The θ step reads the pre-update Λ̂⁻¹(t).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from src.lds import DimensionMismatch
from src.linalg import condition_number, inf_norm, min_eigenvalue, project_pd, spectral_radius, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_THETA_BOUNDS = (-10.0, 10.0)
MAX_EXPONENT_STEP = 50.0
MAX_LAMBDA_COND = 1e12
MAX_DIRECT_GAMMA = 1.0
PD_FLOOR = 1e-10
DEFAULT_K0_NORM = 0.1

# Guard flags reported on StepOutput.flags
THETA_CLAMPED = "theta_clamped"
STEP_CLAMPED = "step_clamped"
UNSTABLE_REJECTED = "unstable_rejected"
LAMBDA_SKIPPED = "lambda_skipped"
LAMBDA_PROJECTED = "lambda_projected"


class RpeError(Exception):
    """Base class for adaptive-filter errors."""


class ThetaOutOfBounds(RpeError):
    """Raised when θ leaves its bounds and the stability guard is off."""


class LambdaIllConditioned(RpeError):
    """Raised when an updated Λ̂ (or Λ̂⁻¹) has condition number above 1e12."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class ScheduleRule(str, Enum):
    CONSTANT = "constant"
    INVERSE_T = "inverse_t"
    DECAY = "decay"


class LambdaMode(str, Enum):
    DIRECT = "direct"
    INVERSE = "inverse"


@dataclass(frozen=True)
class GammaSchedule:
    rule: ScheduleRule = ScheduleRule.DECAY
    c: float = 0.05
    floor: float = 1e-4
    tau: float = 1000.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"learning-rate constant c must be > 0, got {self.c}")
        if self.rule is ScheduleRule.INVERSE_T and self.floor <= 0:
            raise ValueError(f"floor must be > 0 for the inverse_t rule, got {self.floor}")
        if self.rule is ScheduleRule.DECAY and self.tau <= 0:
            raise ValueError(f"tau must be > 0 for the decay rule, got {self.tau}")


@dataclass(frozen=True)
class RpeConfig:
    gamma_schedule: GammaSchedule = field(default_factory=GammaSchedule)
    lambda_mode: LambdaMode = LambdaMode.INVERSE
    theta_bounds: tuple[float, float] = DEFAULT_THETA_BOUNDS
    stability_guard: bool = True

    def __post_init__(self):
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ValueError(f"theta_bounds must satisfy min < max, got {self.theta_bounds}")


def gamma(t: int, schedule: GammaSchedule) -> float:
    """Learning rate γ(t) > 0."""
    if schedule.rule is ScheduleRule.CONSTANT:
        return schedule.c
    if schedule.rule is ScheduleRule.INVERSE_T:
        return max(schedule.c / max(t, 1), schedule.floor)
    return schedule.c / (1.0 + t / schedule.tau)


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RpeState:
    x_hat: np.ndarray
    w_hat: np.ndarray
    theta: float
    K0: np.ndarray
    Lambda_inv: np.ndarray
    Lambda: np.ndarray
    t: int = 0

    @property
    def gain(self) -> np.ndarray:
        return gain_from_theta(self.theta, self.K0)


@dataclass(frozen=True)
class MatrixThetaState:
    """Per-entry variant: one θ and one sensitivity vector per gain entry.

    ``W[i, j]`` is the n-dim sensitivity ∂x̂/∂θ_ij.
    """

    x_hat: np.ndarray
    theta_mat: np.ndarray
    W: np.ndarray
    K0: np.ndarray
    Lambda_inv: np.ndarray
    Lambda: np.ndarray
    t: int = 0

    @property
    def gain(self) -> np.ndarray:
        return gain_from_theta(self.theta_mat, self.K0)


@dataclass(frozen=True)
class StepOutput:
    y_rec: np.ndarray
    eps: np.ndarray
    v_hat: np.ndarray
    grad: float | np.ndarray
    gamma: float
    flags: tuple[str, ...] = ()


class GainUpdate(NamedTuple):
    gain: np.ndarray
    clamped: bool


def default_baseline_gain(H: np.ndarray, norm: float = DEFAULT_K0_NORM) -> np.ndarray:
    """Hᵀ scaled so that ‖K₀‖_∞ = norm."""
    Ht = np.atleast_2d(H).T.astype(float)
    scale = inf_norm(Ht)
    if scale == 0.0:
        raise ValueError("cannot derive a baseline gain from an all-zero H")
    return Ht * (norm / scale)


def initial_rpe_state(K0: np.ndarray, theta0: float = 0.0) -> RpeState:
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    n, p = K0.shape
    return RpeState(
        x_hat=np.zeros(n),
        w_hat=np.zeros(n),
        theta=float(theta0),
        K0=K0,
        Lambda_inv=np.eye(p),
        Lambda=np.eye(p),
        t=0,
    )


def initial_matrix_state(K0: np.ndarray, theta0: np.ndarray | float = 0.0) -> MatrixThetaState:
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    n, p = K0.shape
    return MatrixThetaState(
        x_hat=np.zeros(n),
        theta_mat=np.broadcast_to(np.asarray(theta0, dtype=float), (n, p)).copy(),
        W=np.zeros((n, p, n)),
        K0=K0,
        Lambda_inv=np.eye(p),
        Lambda=np.eye(p),
        t=0,
    )


# ---------------------------------------------------------------------------
# Elementary updates
# ---------------------------------------------------------------------------

def gain_from_theta(theta: float | np.ndarray, K0: np.ndarray) -> np.ndarray:
    """K(θ) = exp(θ)·K₀ elementwise; θ is a scalar or a matrix shaped like K₀."""
    return np.exp(theta) * K0


def multiplicative_gain_update(K: np.ndarray, grad: float, gamma: float) -> GainUpdate:
    """Scale every gain entry by exp(γ·grad), clamping the exponent to ±50."""
    if not math.isfinite(grad):
        raise ValueError(f"gradient must be finite, got {grad}")
    step = gamma * grad
    clamped = abs(step) > MAX_EXPONENT_STEP
    if clamped:
        step = math.copysign(MAX_EXPONENT_STEP, step)
    return GainUpdate(gain=math.exp(step) * K, clamped=clamped)


def lambda_update_direct(Lambda: np.ndarray, eps: np.ndarray, gamma: float) -> np.ndarray:
    """Λ̂ + γ(εεᵀ − Λ̂): the signal-Hebbian covariance rule."""
    return Lambda + gamma * (np.outer(eps, eps) - Lambda)


def lambda_update_inverse(Lambda_inv: np.ndarray, eps: np.ndarray, gamma: float) -> np.ndarray:
    """Λ̂⁻¹ + γ[Λ̂⁻¹ − (Λ̂⁻¹ε)(Λ̂⁻¹ε)ᵀ], symmetrized and projected to PD.

    Raises LambdaIllConditioned if the result's condition number exceeds 1e12.
    """
    u = Lambda_inv @ eps
    updated, _ = guard_lambda_inverse(Lambda_inv + gamma * (Lambda_inv - np.outer(u, u)))
    return updated


def guard_lambda_inverse(candidate: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrize and PD-project a raw inverse-form update.

    Returns the matrix and whether the projection shifted it. Raises
    LambdaIllConditioned when the condition number exceeds 1e12.
    """
    updated, projected = project_pd(candidate, PD_FLOOR)
    cond = condition_number(updated)
    if not cond <= MAX_LAMBDA_COND:
        raise LambdaIllConditioned(f"updated Lambda_inv has condition number {cond:.3e}")
    return updated, projected


def _advance_lambda(
    Lambda: np.ndarray,
    Lambda_inv: np.ndarray,
    eps: np.ndarray,
    g: float,
    mode: LambdaMode,
    flags: list[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the configured Λ̂ rule; skip (and flag) results that are not well-conditioned PD."""
    if g == 0.0:
        return Lambda, Lambda_inv
    if mode is LambdaMode.DIRECT:
        # the convex combination only stays PSD for γ <= 1
        if g > MAX_DIRECT_GAMMA:
            logger.debug("Skipping direct Lambda update (gamma %.3g > %.3g)", g, MAX_DIRECT_GAMMA)
            flags.append(LAMBDA_SKIPPED)
            return Lambda, Lambda_inv
        new_lambda = lambda_update_direct(Lambda, eps, g)
        cond = condition_number(new_lambda)
        if not (cond <= MAX_LAMBDA_COND and min_eigenvalue(new_lambda) > 0.0):
            logger.debug("Skipping direct Lambda update (cond %.3e)", cond)
            flags.append(LAMBDA_SKIPPED)
            return Lambda, Lambda_inv
        return new_lambda, symmetrize(np.linalg.inv(new_lambda))
    u = Lambda_inv @ eps
    try:
        updated, projected = guard_lambda_inverse(Lambda_inv + g * (Lambda_inv - np.outer(u, u)))
    except LambdaIllConditioned as exc:
        logger.debug("Skipping inverse Lambda update: %s", exc)
        flags.append(LAMBDA_SKIPPED)
        return Lambda, Lambda_inv
    if projected:
        flags.append(LAMBDA_PROJECTED)
    return Lambda, updated


def _bounded_theta(
    theta_old: float | np.ndarray,
    increment: float | np.ndarray,
    F: np.ndarray,
    H: np.ndarray,
    K0: np.ndarray,
    cfg: RpeConfig,
    flags: list[str],
) -> float | np.ndarray:
    """Apply the exponent clamp, the θ bounds and the stability guard to one increment."""
    increment = np.asarray(increment, dtype=float)
    if np.any(np.abs(increment) > MAX_EXPONENT_STEP):
        increment = np.clip(increment, -MAX_EXPONENT_STEP, MAX_EXPONENT_STEP)
        flags.append(STEP_CLAMPED)
    theta_new = theta_old + increment

    lo, hi = cfg.theta_bounds
    if np.any(theta_new < lo) or np.any(theta_new > hi):
        if not cfg.stability_guard:
            raise ThetaOutOfBounds(f"theta left [{lo}, {hi}]: {theta_new}")
        theta_new = np.clip(theta_new, lo, hi)
        flags.append(THETA_CLAMPED)

    if cfg.stability_guard:
        radius = spectral_radius(F - gain_from_theta(theta_new, K0) @ H)
        if radius >= 1.0:
            logger.debug("Rejecting theta increment: spectral radius %.4f", radius)
            flags.append(UNSTABLE_REJECTED)
            theta_new = np.asarray(theta_old, dtype=float)

    if np.ndim(theta_old) == 0:
        return float(theta_new)
    return np.asarray(theta_new, dtype=float)


def _check_observation(y: np.ndarray, p: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (p,):
        raise DimensionMismatch(f"observation must have length {p}, got {y.shape[0]}")
    return y


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def rpe_step(
    state: RpeState,
    y: np.ndarray,
    F: np.ndarray,
    H: np.ndarray,
    cfg: RpeConfig,
    gamma_override: float | None = None,
) -> tuple[RpeState, StepOutput]:
    """Advance the scalar-θ adaptive filter by one observation."""
    y = _check_observation(y, H.shape[0])
    flags: list[str] = []
    g = gamma(state.t, cfg.gamma_schedule) if gamma_override is None else float(gamma_override)

    K = gain_from_theta(state.theta, state.K0)
    y_rec = H @ state.x_hat
    eps = y - y_rec
    x_next = F @ state.x_hat + K @ eps
    v_hat = H @ state.w_hat
    w_next = K @ eps + (F - K @ H) @ state.w_hat
    grad = float(v_hat @ (state.Lambda_inv @ eps))

    theta_next = state.theta
    if g != 0.0:
        theta_next = _bounded_theta(state.theta, g * grad, F, H, state.K0, cfg, flags)
    Lambda, Lambda_inv = _advance_lambda(
        state.Lambda, state.Lambda_inv, eps, g, cfg.lambda_mode, flags
    )

    next_state = replace(
        state,
        x_hat=x_next,
        w_hat=w_next,
        theta=theta_next,
        Lambda=Lambda,
        Lambda_inv=Lambda_inv,
        t=state.t + 1,
    )
    return next_state, StepOutput(
        y_rec=y_rec, eps=eps, v_hat=v_hat, grad=grad, gamma=g, flags=tuple(flags)
    )


def rpe_step_matrix(
    state: MatrixThetaState,
    y: np.ndarray,
    F: np.ndarray,
    H: np.ndarray,
    cfg: RpeConfig,
    gamma_override: float | None = None,
) -> tuple[MatrixThetaState, StepOutput]:
    """Advance the per-entry variant: θ_ij has its own sensitivity w^(ij).

    w^(ij)(t+1) = (F − K H) w^(ij) + e_i K_ij ε_j
    θ_ij(t+1)   = θ_ij + γ (H w^(ij))ᵀ Λ̂⁻¹ ε
    """
    y = _check_observation(y, H.shape[0])
    flags: list[str] = []
    g = gamma(state.t, cfg.gamma_schedule) if gamma_override is None else float(gamma_override)
    n = F.shape[0]

    K = gain_from_theta(state.theta_mat, state.K0)
    y_rec = H @ state.x_hat
    eps = y - y_rec
    x_next = F @ state.x_hat + K @ eps
    A = F - K @ H
    V = state.W @ H.T  # (n, p, p): v^(ij) = H w^(ij)
    W_next = state.W @ A.T + np.einsum("ai,ij,j->ija", np.eye(n), K, eps)
    grad = V @ (state.Lambda_inv @ eps)

    theta_next = state.theta_mat
    if g != 0.0:
        theta_next = _bounded_theta(state.theta_mat, g * grad, F, H, state.K0, cfg, flags)
    Lambda, Lambda_inv = _advance_lambda(
        state.Lambda, state.Lambda_inv, eps, g, cfg.lambda_mode, flags
    )

    next_state = replace(
        state,
        x_hat=x_next,
        theta_mat=theta_next,
        W=W_next,
        Lambda=Lambda,
        Lambda_inv=Lambda_inv,
        t=state.t + 1,
    )
    return next_state, StepOutput(
        y_rec=y_rec, eps=eps, v_hat=V, grad=grad, gamma=g, flags=tuple(flags)
    )


def reconstruct_frozen(
    ys: np.ndarray,
    F: np.ndarray,
    H: np.ndarray,
    K0: np.ndarray,
    theta: float,
) -> np.ndarray:
    """Reconstructed inputs ŷ(t, θ) of the fixed-gain predictor, starting from x̂ = 0."""
    K = gain_from_theta(theta, K0)
    x = np.zeros(F.shape[0])
    out = np.empty((len(ys), H.shape[0]))
    for t, y in enumerate(ys):
        out[t] = H @ x
        x = F @ x + K @ (y - out[t])
    return out
