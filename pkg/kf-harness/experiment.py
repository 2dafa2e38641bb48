"""Run the exact and adaptive filters side by side on simulated systems."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).resolve().parent))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_loader import ExperimentConfig, FilterKind, K0Kind
from metrics_io import MetricsRow, TrajectoryRecord
from src.kalman import gain_sequence, prediction_gain, steady_state_gain
from src.lds import simulate
from src.linalg import condition_number, inf_norm
from src.netgraph import THETA_ID, collateral_matrix, execute_step, graph_from_state
from src.rpe import (
    default_baseline_gain,
    gain_from_theta,
    gamma,
    initial_matrix_state,
    initial_rpe_state,
    rpe_step,
    rpe_step_matrix,
)
from src.stats import log_linear_fit, mean, median, standard_error, tail

logger = logging.getLogger(__name__)

FINAL_FRACTION = 0.2
CONVERGED_GAIN_ERR = 1e-12


class RunError(Exception):
    """Raised when a run fails; carries the run index and the failing step."""

    def __init__(self, run: int, step: int, cause: BaseException):
        super().__init__(f"run {run}, step {step}: {type(cause).__name__}: {cause}")
        self.run = run
        self.step = step
        self.cause = cause


@dataclass
class RunResult:
    run: int
    seed: int
    rows: list[MetricsRow]
    final_theta: float
    guard_events: int = 0
    trajectory: TrajectoryRecord | None = None


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    summary: dict
    runs: list[RunResult] = field(default_factory=list)


def run_seed(master_seed: int, run: int) -> int:
    """Independent per-run seed; the same (master, run) pair always gives the same value."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(run,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def optimal_gain(cfg: ExperimentConfig) -> np.ndarray:
    """K* in prediction form, F·K^f*."""
    steady = steady_state_gain(cfg.model, tol=cfg.oracle.tol, max_iter=cfg.oracle.max_iter)
    logger.info("Steady-state gain converged in %d iterations", steady.iterations)
    return prediction_gain(steady.Kf, cfg.model)


def baseline_gain(cfg: ExperimentConfig, k_star: np.ndarray) -> np.ndarray:
    if cfg.k0.kind is K0Kind.EXPLICIT:
        return np.array(cfg.k0.matrix, dtype=float)
    if cfg.k0.kind is K0Kind.SCALED_OPTIMAL:
        return cfg.k0.scale * k_star
    return default_baseline_gain(cfg.model.H)


# ---------------------------------------------------------------------------
# Adaptive filters behind one interface
# ---------------------------------------------------------------------------

class _Adaptive:
    """Advance one adaptive filter per observation and expose what the metrics need."""

    def __init__(self, cfg: ExperimentConfig, K0: np.ndarray):
        self.cfg = cfg
        self.kind = cfg.filter
        F, H = cfg.model.F, cfg.model.H
        if self.kind is FilterKind.RPE_MATRIX:
            self.state = initial_matrix_state(K0, cfg.theta0)
        elif self.kind is FilterKind.NETGRAPH:
            self.graph = graph_from_state(initial_rpe_state(K0, cfg.theta0), F, H)
            self.K0 = np.array(K0, dtype=float)
            self.t = 0
        else:
            self.state = initial_rpe_state(K0, cfg.theta0)

    def step(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
        """Returns (x̂ used for this prediction, ε, flags)."""
        F, H, rpe = self.cfg.model.F, self.cfg.model.H, self.cfg.rpe
        if self.kind is FilterKind.NETGRAPH:
            x_hat = np.array([self.graph.nodes[f"x[{i}]"].activation for i in range(self.cfg.n)])
            g = gamma(self.t, rpe.gamma_schedule)
            self.graph, out = execute_step(self.graph, y, g, rpe, in_place=True)
            self.t += 1
            return x_hat, out.eps, out.flags
        x_hat = self.state.x_hat
        if self.kind is FilterKind.RPE_MATRIX:
            self.state, out = rpe_step_matrix(self.state, y, F, H, rpe)
        else:
            self.state, out = rpe_step(self.state, y, F, H, rpe)
        return x_hat, out.eps, out.flags

    @property
    def theta(self) -> float:
        if self.kind is FilterKind.NETGRAPH:
            return float(self.graph.nodes[THETA_ID].activation)
        if self.kind is FilterKind.RPE_MATRIX:
            return float(np.mean(self.state.theta_mat))
        return float(self.state.theta)

    @property
    def gain(self) -> np.ndarray:
        if self.kind is FilterKind.NETGRAPH:
            return gain_from_theta(self.theta, self.K0)
        if self.kind is FilterKind.RPE_MATRIX:
            return gain_from_theta(self.state.theta_mat, self.state.K0)
        return gain_from_theta(self.state.theta, self.state.K0)

    @property
    def lambda_inv(self) -> np.ndarray:
        if self.kind is FilterKind.NETGRAPH:
            return collateral_matrix(self.graph)
        return self.state.Lambda_inv


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def run_single(
    cfg: ExperimentConfig,
    run_index: int,
    k_star: np.ndarray,
    K0: np.ndarray,
    gains: np.ndarray | None = None,
) -> RunResult:
    """Simulate one trajectory and feed the identical observations to every filter.

    ``gains`` is the exact filter-gain sequence; it does not depend on the
    data, so run_experiment computes it once for all runs.
    """
    model = cfg.model
    seed = run_seed(cfg.seed, run_index)
    step = -1
    try:
        traj = simulate(model, cfg.T, seed, x0=cfg.x0, x0_cov=cfg.x0_cov)
        if gains is None:
            gains = gain_sequence(model, cfg.T, N0=cfg.kalman_N0)
        adaptive = None if cfg.filter is FilterKind.CLASSIC else _Adaptive(cfg, K0)

        x_post = np.zeros(cfg.n) if cfg.kalman_x0 is None else np.array(cfg.kalman_x0, dtype=float)
        keep = cfg.outputs.trajectory
        xhat_classic = np.empty((cfg.T, cfg.n)) if keep else None
        xhat_rpe = np.full((cfg.T, cfg.n), np.nan) if keep else None
        rows: list[MetricsRow] = []
        guard_events = 0

        for step, y in enumerate(traj.observations):
            x_prior = model.F @ x_post
            innovation = y - model.H @ x_prior
            x_post = x_prior + gains[step] @ innovation
            if keep:
                xhat_classic[step] = x_post

            if adaptive is None:
                gain_err = inf_norm(model.F @ gains[step] - k_star)
                mse_rpe = theta = lambda_cond = float("nan")
                flags: tuple[str, ...] = ()
            else:
                x_hat, eps, flags = adaptive.step(y)
                if keep:
                    xhat_rpe[step] = x_hat
                mse_rpe = float(eps @ eps)
                gain_err = inf_norm(adaptive.gain - k_star)
                theta = adaptive.theta
                lambda_cond = condition_number(adaptive.lambda_inv)
                guard_events += len(flags)

            rows.append(MetricsRow(
                t=step,
                mse_classic=float(innovation @ innovation),
                mse_rpe=mse_rpe,
                gain_err=gain_err,
                theta=theta,
                lambda_cond=lambda_cond,
                flags=flags,
            ))
    except Exception as exc:
        raise RunError(run_index, step, exc) from exc

    final_theta = rows[-1].theta
    logger.info(
        "Run %d done: terminal gain error %.3e, theta %.4f, %d guard events",
        run_index, rows[-1].gain_err, final_theta, guard_events,
    )
    trajectory = None
    if keep:
        trajectory = TrajectoryRecord(
            run=run_index,
            states=traj.states,
            observations=traj.observations,
            xhat_classic=xhat_classic,
            xhat_rpe=xhat_rpe,
        )
    return RunResult(
        run=run_index,
        seed=seed,
        rows=rows,
        final_theta=final_theta,
        guard_events=guard_events,
        trajectory=trajectory,
    )


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

def _finite_or_none(values: list[float], reducer) -> float | None:
    if not values or any(not np.isfinite(v) for v in values):
        return None
    return float(reducer(values))


def convergence_fit(runs: list[RunResult]) -> tuple[float | None, float | None]:
    """Log-linear fit of the across-run median gain error, up to where it first converges."""
    curve = np.median(np.array([[row.gain_err for row in r.rows] for r in runs]), axis=0)
    converged = np.flatnonzero(~(curve > CONVERGED_GAIN_ERR))
    prefix = curve[: converged[0]] if converged.size else curve
    if prefix.size < 3:
        return None, None
    fit = log_linear_fit(prefix)
    return fit.slope, fit.r2


def summarize(cfg: ExperimentConfig, runs: list[RunResult]) -> dict:
    terminal_err = [r.rows[-1].gain_err for r in runs]
    classic_tail = [mean(tail([row.mse_classic for row in r.rows], FINAL_FRACTION)) for r in runs]
    rpe_tail = [mean(tail([row.mse_rpe for row in r.rows], FINAL_FRACTION)) for r in runs]
    ratios = [a / c for a, c in zip(rpe_tail, classic_tail)]
    drift = [(r.final_theta - cfg.theta0) / cfg.T for r in runs]
    slope, r2 = convergence_fit(runs)

    return {
        "runs": cfg.runs,
        "T": cfg.T,
        "filter": cfg.filter.value,
        "terminal_gain_err_median": float(median(terminal_err)),
        "terminal_gain_err_mean": float(mean(terminal_err)),
        "mse_ratio_final20_median": _finite_or_none(ratios, median),
        "mse_classic_final20_mean": float(mean(classic_tail)),
        "mse_rpe_final20_mean": _finite_or_none(rpe_tail, mean),
        "convergence_slope": slope,
        "convergence_r2": r2,
        "theta_drift_mean": _finite_or_none(drift, mean),
        "theta_drift_stderr": _finite_or_none(drift, standard_error) if len(drift) > 1 else None,
        "terminal_exp_theta_median": _finite_or_none([float(np.exp(r.final_theta)) for r in runs], median),
        "guard_events": sum(r.guard_events for r in runs),
    }


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Execute every run and merge their rows in (run, t) order."""
    k_star = optimal_gain(cfg)
    K0 = baseline_gain(cfg, k_star)
    gains = gain_sequence(cfg.model, cfg.T, N0=cfg.kalman_N0)
    logger.info(
        "Starting %d run(s) of %s, T=%d, seed=%d, workers=%d",
        cfg.runs, cfg.filter.value, cfg.T, cfg.seed, workers,
    )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(run_single, cfg, run, k_star, K0, gains) for run in range(cfg.runs)]
        runs = [future.result() for future in futures]

    rows = [row for r in runs for row in r.rows]
    return ExperimentResult(rows=rows, summary=summarize(cfg, runs), runs=runs)
