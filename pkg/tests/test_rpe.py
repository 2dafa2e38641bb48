"""Tests for the recursive-prediction-error gain adaptation."""
import math

import numpy as np
import pytest

from src.kalman import predict_step, prediction_gain, steady_state_gain
from src.lds import DimensionMismatch, simulate
from src.rpe import (
    LAMBDA_SKIPPED,
    STEP_CLAMPED,
    THETA_CLAMPED,
    UNSTABLE_REJECTED,
    GammaSchedule,
    LambdaIllConditioned,
    LambdaMode,
    RpeConfig,
    RpeState,
    ScheduleRule,
    ThetaOutOfBounds,
    default_baseline_gain,
    gain_from_theta,
    gamma,
    initial_matrix_state,
    initial_rpe_state,
    lambda_update_direct,
    lambda_update_inverse,
    multiplicative_gain_update,
    reconstruct_frozen,
    rpe_step,
    rpe_step_matrix,
)
from src.linalg import inf_norm, is_symmetric, min_eigenvalue
from src.stats import log_log_slope, median, sample_covariance, standard_error

FROZEN = RpeConfig(gamma_schedule=GammaSchedule(rule=ScheduleRule.CONSTANT, c=0.01))


def _scalar_state(x_hat, w_hat, theta, K0, Lambda_inv=None):
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    p = K0.shape[1]
    return RpeState(
        x_hat=np.atleast_1d(np.asarray(x_hat, dtype=float)),
        w_hat=np.atleast_1d(np.asarray(w_hat, dtype=float)),
        theta=theta,
        K0=K0,
        Lambda_inv=np.eye(p) if Lambda_inv is None else Lambda_inv,
        Lambda=np.eye(p),
    )


# --- gamma ---

def test_gamma_constant():
    schedule = GammaSchedule(rule=ScheduleRule.CONSTANT, c=0.01)
    assert all(gamma(t, schedule) == 0.01 for t in (0, 1, 10, 10**6))


def test_gamma_inverse_t():
    schedule = GammaSchedule(rule=ScheduleRule.INVERSE_T, c=1.0, floor=1e-4)
    assert math.isclose(gamma(10, schedule), 0.1)
    assert gamma(0, schedule) == 1.0
    assert gamma(10**7, schedule) == 1e-4


def test_gamma_decay():
    schedule = GammaSchedule(rule=ScheduleRule.DECAY, c=0.1, tau=100)
    assert math.isclose(gamma(100, schedule), 0.05)


@pytest.mark.parametrize("rule", list(ScheduleRule))
def test_gamma_positive_and_non_increasing(rule):
    schedule = GammaSchedule(rule=rule, c=0.5, floor=1e-3, tau=10)
    values = [gamma(t, schedule) for t in range(500)]
    assert all(v > 0 for v in values)
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_gamma_schedule_validation():
    with pytest.raises(ValueError):
        GammaSchedule(c=0.0)
    with pytest.raises(ValueError):
        GammaSchedule(rule=ScheduleRule.INVERSE_T, floor=0.0)
    with pytest.raises(ValueError):
        GammaSchedule(rule=ScheduleRule.DECAY, tau=-1.0)


def test_config_rejects_empty_bounds():
    with pytest.raises(ValueError):
        RpeConfig(theta_bounds=(1.0, 1.0))


# --- gain_from_theta / multiplicative_gain_update ---

def test_gain_from_theta_zero_is_baseline():
    K0 = np.array([[0.3, -0.1], [0.2, 0.0]])
    np.testing.assert_array_equal(gain_from_theta(0.0, K0), K0)


def test_gain_from_theta_log_two_doubles():
    np.testing.assert_allclose(gain_from_theta(math.log(2.0), np.eye(2)), 2.0 * np.eye(2))


def test_gain_from_theta_is_its_own_derivative():
    K0 = np.array([[0.3, -0.1], [0.2, 0.05]])
    theta, h = 0.4, 1e-6
    numeric = (gain_from_theta(theta + h, K0) - gain_from_theta(theta - h, K0)) / (2 * h)
    exact = gain_from_theta(theta, K0)
    assert np.max(np.abs(numeric - exact)) / np.max(np.abs(exact)) < 1e-8


def test_multiplicative_update_zero_gradient():
    K = np.array([[0.2], [0.4]])
    update = multiplicative_gain_update(K, 0.0, 0.1)
    np.testing.assert_array_equal(update.gain, K)
    assert not update.clamped


def test_multiplicative_update_triples():
    K = np.array([[0.2, -1.0]])
    update = multiplicative_gain_update(K, math.log(3.0), 1.0)
    np.testing.assert_allclose(update.gain, 3.0 * K, rtol=1e-14)


def test_multiplicative_update_clamps_exponent():
    update = multiplicative_gain_update(np.ones((1, 1)), 1000.0, 0.1)
    assert update.clamped
    assert math.isclose(update.gain[0, 0], math.exp(50.0))


def test_multiplicative_update_rejects_nan():
    with pytest.raises(ValueError):
        multiplicative_gain_update(np.ones((1, 1)), float("nan"), 0.1)


def test_multiplicative_path_matches_additive_theta(rng):
    K0 = rng.uniform(-1.0, 1.0, size=(3, 2))
    theta = 0.0
    K = K0.copy()
    for _ in range(1000):
        grad = rng.standard_normal()
        g = 0.05 * rng.uniform()
        K = multiplicative_gain_update(K, grad, g).gain
        theta += g * grad
        np.testing.assert_allclose(K, gain_from_theta(theta, K0), rtol=1e-12, atol=1e-15)


def test_default_baseline_gain():
    H = np.array([[1.0, 2.0], [0.0, -1.0]])
    K0 = default_baseline_gain(H)
    assert math.isclose(inf_norm(K0), 0.1)
    np.testing.assert_allclose(K0 / K0[0, 0], H.T)


def test_default_baseline_gain_rejects_zero_h():
    with pytest.raises(ValueError):
        default_baseline_gain(np.zeros((1, 2)))


# --- lambda_update_direct / lambda_update_inverse ---

def test_lambda_direct_full_replacement():
    eps = np.array([0.5, -2.0])
    np.testing.assert_allclose(lambda_update_direct(np.eye(2), eps, 1.0), np.outer(eps, eps))


def test_lambda_direct_zero_error_decays():
    Lam = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(lambda_update_direct(Lam, np.zeros(2), 0.2), 0.8 * Lam)


def test_lambda_direct_tracks_sample_covariance(rng):
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    chol = np.linalg.cholesky(cov)
    errors = rng.standard_normal((100_000, 2)) @ chol.T
    schedule = GammaSchedule(rule=ScheduleRule.INVERSE_T, c=1.0, floor=1e-12)
    Lam = np.eye(2)
    for t, eps in enumerate(errors, start=1):
        Lam = lambda_update_direct(Lam, eps, gamma(t, schedule))
    assert is_symmetric(Lam, tol=0.0)
    assert np.linalg.norm(Lam - sample_covariance(errors)) / np.linalg.norm(cov) < 0.05


def test_lambda_inverse_zero_error_grows():
    Li = np.array([[1.0, 0.2], [0.2, 0.5]])
    np.testing.assert_allclose(lambda_update_inverse(Li, np.zeros(2), 0.1), 1.1 * Li)


def test_lambda_inverse_zero_gamma_unchanged():
    Li = np.array([[1.0, 0.2], [0.2, 0.5]])
    np.testing.assert_array_equal(lambda_update_inverse(Li, np.array([3.0, -1.0]), 0.0), Li)


def test_lambda_inverse_projects_to_positive_definite():
    updated = lambda_update_inverse(np.eye(2), np.array([3.0, 0.0]), 0.5)
    assert is_symmetric(updated, tol=0.0)
    assert min_eigenvalue(updated) > 0.0


def test_lambda_inverse_rejects_ill_conditioned():
    with pytest.raises(LambdaIllConditioned):
        lambda_update_inverse(np.diag([1e4, 1e-9]), np.zeros(2), 0.1)


def test_lambda_inverse_agrees_with_direct_to_first_order():
    Lam = np.array([[1.5, 0.3], [0.3, 0.8]])
    eps = np.array([0.4, -0.3])
    gammas = np.array([1e-1, 1e-2, 1e-3])
    discrepancies = [
        np.linalg.norm(
            lambda_update_inverse(np.linalg.inv(Lam), eps, g)
            - np.linalg.inv(lambda_update_direct(Lam, eps, g))
        )
        for g in gammas
    ]
    assert 1.8 <= log_log_slope(gammas, discrepancies) <= 2.2


# --- rpe_step ---

def test_rpe_step_reconstruction_identity(ray_model, rng):
    state = _scalar_state(rng.standard_normal(2), rng.standard_normal(2), 0.2, 0.3 * np.eye(2))
    y = rng.standard_normal(2)
    _, out = rpe_step(state, y, ray_model.F, ray_model.H, RpeConfig())
    np.testing.assert_allclose(out.y_rec + out.eps, y, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(out.v_hat, ray_model.H @ state.w_hat)


def test_rpe_step_zero_error(ray_model):
    F, H = ray_model.F, ray_model.H
    state = _scalar_state([1.0, -0.5], [0.3, 0.2], 0.1, 0.2 * np.eye(2))
    cfg = RpeConfig(lambda_mode=LambdaMode.DIRECT)
    nxt, out = rpe_step(state, H @ state.x_hat, F, H, cfg, gamma_override=0.1)
    K = gain_from_theta(0.1, state.K0)
    np.testing.assert_array_equal(out.eps, np.zeros(2))
    assert nxt.theta == state.theta
    np.testing.assert_allclose(nxt.x_hat, F @ state.x_hat)
    np.testing.assert_allclose(nxt.w_hat, (F - K @ H) @ state.w_hat)
    np.testing.assert_allclose(nxt.Lambda, 0.9 * state.Lambda)
    assert nxt.t == 1


def test_rpe_step_sensitivity_rewrite(ray_model, rng):
    F, H = ray_model.F, ray_model.H
    state = _scalar_state(rng.standard_normal(2), rng.standard_normal(2), -0.3, rng.uniform(0.1, 0.4, (2, 2)))
    y = rng.standard_normal(2)
    nxt, out = rpe_step(state, y, F, H, RpeConfig())
    K = state.gain
    # dK/dθ = K, so the derivative of F x̂ + K ε is F ŵ + K ε − K H ŵ
    expanded = F @ state.w_hat + K @ out.eps - K @ H @ state.w_hat
    np.testing.assert_allclose(nxt.w_hat, expanded, rtol=1e-14, atol=1e-14)


def test_rpe_step_reads_pre_update_lambda(ray_model):
    F, H = ray_model.F, ray_model.H
    Li = np.array([[2.0, 0.0], [0.0, 0.5]])
    state = _scalar_state([0.0, 0.0], [1.0, 1.0], 0.0, 0.1 * np.eye(2), Lambda_inv=Li)
    y = np.array([1.0, 1.0])
    nxt, out = rpe_step(state, y, F, H, RpeConfig(), gamma_override=0.01)
    assert math.isclose(out.grad, 2.5)
    assert math.isclose(nxt.theta, 0.025)
    assert not np.array_equal(nxt.Lambda_inv, Li)


def test_rpe_step_zero_gamma_is_fixed_gain_predictor(tracking_model):
    F, H = tracking_model.F, tracking_model.H
    K0 = np.array([[0.2], [0.05]])
    theta0 = 0.3
    traj = simulate(tracking_model, T=300, seed=4)
    state = initial_rpe_state(K0, theta0)
    x_prior = np.zeros(2)
    Kp = gain_from_theta(theta0, K0)
    for y in traj.observations:
        state, out = rpe_step(state, y, F, H, RpeConfig(), gamma_override=0.0)
        x_prior = predict_step(x_prior, y, Kp, tracking_model)
        np.testing.assert_allclose(state.x_hat, x_prior, rtol=1e-12, atol=1e-12)
        assert state.theta == theta0
        np.testing.assert_array_equal(state.Lambda_inv, np.eye(1))
        assert out.flags == ()


def test_rpe_sensitivity_matches_finite_differences(tracking_model):
    F, H = tracking_model.F, tracking_model.H
    K0 = np.array([[0.3], [0.1]])
    theta, h = 0.2, 1e-6
    ys = simulate(tracking_model, T=50, seed=21).observations
    state = initial_rpe_state(K0, theta)
    v_hats = []
    for y in ys:
        state, out = rpe_step(state, y, F, H, RpeConfig(), gamma_override=0.0)
        v_hats.append(out.v_hat)
    v_hats = np.array(v_hats)
    fd = (reconstruct_frozen(ys, F, H, K0, theta + h) - reconstruct_frozen(ys, F, H, K0, theta - h)) / (2 * h)
    assert np.linalg.norm(v_hats - fd) / np.linalg.norm(v_hats) < 1e-6


def test_rpe_sensitivity_matches_finite_differences_at_random_steps(ray_model, rng):
    F, H = ray_model.F, ray_model.H
    K0 = np.array([[0.3, 0.05], [0.1, 0.2]])
    theta, h = -0.1, 1e-6
    ys = simulate(ray_model, T=400, seed=22).observations
    state = initial_rpe_state(K0, theta)
    v_hats = []
    for y in ys:
        state, out = rpe_step(state, y, F, H, RpeConfig(), gamma_override=0.0)
        v_hats.append(out.v_hat)
    fd = (reconstruct_frozen(ys, F, H, K0, theta + h) - reconstruct_frozen(ys, F, H, K0, theta - h)) / (2 * h)
    for t in rng.choice(np.arange(10, 400), size=50, replace=False):
        assert np.linalg.norm(v_hats[t] - fd[t]) / np.linalg.norm(v_hats[t]) < 1e-6


def test_rpe_step_preserves_gain_signs(ray_model):
    K0 = np.array([[0.2, -0.05], [0.0, 0.1]])
    state = initial_rpe_state(K0)
    sign = np.sign(K0)
    cfg = RpeConfig(gamma_schedule=GammaSchedule(rule=ScheduleRule.CONSTANT, c=0.05))
    for y in simulate(ray_model, T=500, seed=2).observations:
        state, _ = rpe_step(state, y, ray_model.F, ray_model.H, cfg)
        np.testing.assert_array_equal(np.sign(state.gain), sign)


def test_rpe_step_stability_guard_rejects_increment():
    F, H = np.array([[0.5]]), np.array([[1.0]])
    state = _scalar_state([0.0], [1.0], 0.0, [[1.0]])
    nxt, out = rpe_step(state, [1.0], F, H, RpeConfig(), gamma_override=1.0)
    assert out.grad == 1.0
    assert nxt.theta == 0.0
    assert out.flags == (UNSTABLE_REJECTED,)


def test_rpe_step_theta_out_of_bounds_without_guard():
    F, H = np.array([[0.5]]), np.array([[1.0]])
    state = _scalar_state([0.0], [1.0], 0.0, [[0.01]])
    cfg = RpeConfig(theta_bounds=(-1.0, 1.0), stability_guard=False)
    with pytest.raises(ThetaOutOfBounds):
        rpe_step(state, [1.0], F, H, cfg, gamma_override=2.0)


def test_rpe_step_theta_clamped_with_guard():
    F, H = np.array([[0.5]]), np.array([[1.0]])
    state = _scalar_state([0.0], [1.0], 0.0, [[0.01]])
    cfg = RpeConfig(theta_bounds=(-1.0, 1.0))
    nxt, out = rpe_step(state, [1.0], F, H, cfg, gamma_override=2.0)
    assert nxt.theta == 1.0
    assert out.flags == (THETA_CLAMPED,)


def test_rpe_step_clamps_large_exponent():
    F, H = np.array([[0.5]]), np.array([[1.0]])
    state = _scalar_state([0.0], [1.0], 0.0, [[1e-6]])
    nxt, out = rpe_step(state, [1.0], F, H, RpeConfig(), gamma_override=100.0)
    assert nxt.theta == 10.0
    assert out.flags[:2] == (STEP_CLAMPED, THETA_CLAMPED)


def test_rpe_step_skips_singular_direct_update():
    F, H = 0.5 * np.eye(2), np.eye(2)
    state = _scalar_state([0.0, 0.0], [0.0, 0.0], 0.0, 0.1 * np.eye(2))
    cfg = RpeConfig(lambda_mode=LambdaMode.DIRECT)
    nxt, out = rpe_step(state, [1.0, 2.0], F, H, cfg, gamma_override=1.0)
    assert LAMBDA_SKIPPED in out.flags
    np.testing.assert_array_equal(nxt.Lambda, np.eye(2))
    np.testing.assert_array_equal(nxt.Lambda_inv, np.eye(2))


def test_rpe_step_direct_mode_keeps_inverse_in_sync(ray_model):
    cfg = RpeConfig(lambda_mode=LambdaMode.DIRECT)
    state = initial_rpe_state(0.2 * np.eye(2))
    for y in simulate(ray_model, T=200, seed=6).observations:
        state, _ = rpe_step(state, y, ray_model.F, ray_model.H, cfg)
        assert is_symmetric(state.Lambda, tol=0.0)
        assert min_eigenvalue(state.Lambda) >= 0.0
    np.testing.assert_allclose(state.Lambda_inv @ state.Lambda, np.eye(2), atol=1e-9)


def test_rpe_step_direct_mode_skips_learning_rate_above_one():
    F, H = 0.5 * np.eye(2), np.eye(2)
    state = _scalar_state([0.0, 0.0], [0.0, 0.0], 0.0, 0.1 * np.eye(2))
    cfg = RpeConfig(lambda_mode=LambdaMode.DIRECT)
    nxt, out = rpe_step(state, [3.0, -1.0], F, H, cfg, gamma_override=1.5)
    assert LAMBDA_SKIPPED in out.flags
    np.testing.assert_array_equal(nxt.Lambda, state.Lambda)
    np.testing.assert_array_equal(nxt.Lambda_inv, state.Lambda_inv)


def test_rpe_step_direct_mode_stays_positive_definite_with_large_constant_rate(ray_model):
    cfg = RpeConfig(
        gamma_schedule=GammaSchedule(rule=ScheduleRule.CONSTANT, c=1.5),
        lambda_mode=LambdaMode.DIRECT,
    )
    state = initial_rpe_state(0.2 * np.eye(2))
    for y in np.random.default_rng(3).standard_normal((20, 2)):
        state, out = rpe_step(state, y, ray_model.F, ray_model.H, cfg)
        assert LAMBDA_SKIPPED in out.flags
        assert min_eigenvalue(state.Lambda_inv) > 0.0
        assert min_eigenvalue(state.Lambda) > 0.0


def test_rpe_step_rejects_wrong_observation(ray_model):
    state = initial_rpe_state(0.1 * np.eye(2))
    with pytest.raises(DimensionMismatch):
        rpe_step(state, [1.0], ray_model.F, ray_model.H, RpeConfig())


def test_rpe_fixed_point_has_no_drift(ray_model):
    F, H = ray_model.F, ray_model.H
    K_star = prediction_gain(steady_state_gain(ray_model).Kf, ray_model)
    ys = simulate(ray_model, T=101_000, seed=31).observations
    state = initial_rpe_state(K_star)
    for y in ys[:1000]:
        state, _ = rpe_step(state, y, F, H, FROZEN, gamma_override=0.0)
    drifts = np.empty(100_000)
    for t, y in enumerate(ys[1000:]):
        theta = state.theta
        state, out = rpe_step(state, y, F, H, FROZEN, gamma_override=1e-5)
        assert out.flags == ()
        drifts[t] = state.theta - theta
    assert abs(drifts.mean()) < 3.0 * standard_error(drifts)


# --- rpe_step_matrix ---

def test_matrix_variant_collapses_to_scalar_in_one_dimension():
    model_F, model_H = np.array([[0.8]]), np.array([[1.0]])
    K0 = np.array([[0.3]])
    rng = np.random.default_rng(12)
    ys = rng.standard_normal((200, 1))
    cfg = RpeConfig(gamma_schedule=GammaSchedule(rule=ScheduleRule.CONSTANT, c=0.02))
    scalar = initial_rpe_state(K0)
    matrix = initial_matrix_state(K0)
    for y in ys:
        scalar, s_out = rpe_step(scalar, y, model_F, model_H, cfg)
        matrix, m_out = rpe_step_matrix(matrix, y, model_F, model_H, cfg)
        np.testing.assert_allclose(matrix.x_hat, scalar.x_hat, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(matrix.W[0, 0], scalar.w_hat, rtol=1e-14, atol=1e-14)
        assert math.isclose(matrix.theta_mat[0, 0], scalar.theta, rel_tol=1e-14, abs_tol=1e-14)
        np.testing.assert_allclose(matrix.Lambda_inv, scalar.Lambda_inv, rtol=1e-14)
        assert m_out.flags == s_out.flags


def test_matrix_variant_zero_gamma_freezes_theta(ray_model):
    state = initial_matrix_state(0.2 * np.ones((2, 2)), theta0=0.1)
    for y in simulate(ray_model, T=50, seed=1).observations:
        state, _ = rpe_step_matrix(state, y, ray_model.F, ray_model.H, RpeConfig(), gamma_override=0.0)
    np.testing.assert_array_equal(state.theta_mat, np.full((2, 2), 0.1))
    assert state.W.shape == (2, 2, 2)


def test_matrix_variant_sensitivity_matches_finite_differences(ray_model):
    F, H = ray_model.F, ray_model.H
    K0 = np.array([[0.3, 0.1], [0.05, 0.2]])
    ys = simulate(ray_model, T=60, seed=13).observations
    state = initial_matrix_state(K0)
    for y in ys:
        state, out = rpe_step_matrix(state, y, F, H, RpeConfig(), gamma_override=0.0)
    h = 1e-6
    for i in range(2):
        for j in range(2):
            bump = np.zeros((2, 2))
            bump[i, j] = h
            # replay the predictor at θ_ij ± h; its gain is exp(θ)·K₀ entrywise
            plus = reconstruct_frozen(ys, F, H, K0 * np.exp(bump), 0.0)[-1]
            minus = reconstruct_frozen(ys, F, H, K0 * np.exp(-bump), 0.0)[-1]
            fd = (plus - minus) / (2 * h)
            np.testing.assert_allclose(out.v_hat[i, j], fd, rtol=1e-5, atol=1e-9)


def test_matrix_variant_moves_gain_toward_optimum(ray_model):
    F, H = ray_model.F, ray_model.H
    K_star = prediction_gain(steady_state_gain(ray_model).Kf, ray_model)
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        mask = rng.uniform(0.6, 1.0, size=K_star.shape)
        K0 = 0.7 * K_star * mask
        state = initial_matrix_state(K0)
        for y in simulate(ray_model, T=20_000, seed=seed).observations:
            state, _ = rpe_step_matrix(state, y, F, H, RpeConfig())
        ratios.append(inf_norm(K0 - K_star) / inf_norm(state.gain - K_star))
    assert median(ratios) >= 3.0
