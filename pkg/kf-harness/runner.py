#!/usr/bin/env python3
"""Experiment runner: exact vs. adaptive Kalman filtering from a YAML config."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config_loader import ConfigError, ExperimentConfig, load_config, resolved_config_yaml
from experiment import baseline_gain, optimal_gain, run_experiment, run_seed
from metrics_io import write_metrics, write_summary, write_trajectory
from src.kalman import initial_state, prediction_gain, riccati_prior_covariance, steady_state_gain
from src.lds import simulate
from src.netgraph import (
    Trace,
    architecture_table,
    audit_locality,
    dense_kalman_trace,
    execute_step,
    export_edge_list,
    graph_from_state,
)
from src.rpe import gamma, initial_rpe_state

from rich.console import Console
from rich.table import Table

log = logging.getLogger("runner")
console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_INTERRUPTED = 130

HARNESS_DIR = Path(__file__).resolve().parent
REPO_ROOT = HARNESS_DIR.parent


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "[dim]n/a[/dim]"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def summary_table(cfg: ExperimentConfig, summary: dict) -> Table:
    table = Table(title=f"Summary: {cfg.name}", expand=True)
    table.add_column("Metric", style="cyan", no_wrap=True)
    table.add_column("Value", justify="right")
    for key in sorted(summary):
        table.add_row(key, _fmt(summary[key]))
    return table


def matrix_table(title: str, a: np.ndarray) -> Table:
    table = Table(title=title)
    table.add_column("", style="cyan", justify="right")
    for j in range(a.shape[1]):
        table.add_column(str(j), justify="right")
    for i, row in enumerate(a):
        table.add_row(str(i), *(f"{v:.10g}" for v in row))
    return table


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out_dir = Path(args.out_dir or cfg.outputs.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(resolved_config_yaml(cfg))
    log.info("Resolved config written to %s", out_dir / "resolved_config.yaml")

    result = run_experiment(cfg, workers=args.workers)

    if cfg.outputs.metrics:
        count = write_metrics(result.rows, out_dir / "metrics.csv")
        log.info("Wrote %d metric rows to %s", count, out_dir / "metrics.csv")
    if cfg.outputs.summary:
        write_summary(result.summary, out_dir / "summary.json")
    if cfg.outputs.trajectory:
        write_trajectory((r.trajectory for r in result.runs), out_dir / "trajectory.csv", cfg.n, cfg.p)

    console.print(summary_table(cfg, result.summary))
    return EXIT_OK


def cmd_steady_state(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed)
    steady = steady_state_gain(cfg.model, tol=cfg.oracle.tol, max_iter=cfg.oracle.max_iter)
    console.print(
        f"[bold]{cfg.name}[/bold]: converged in {steady.iterations} iterations "
        f"(residual {steady.residual:.3e})"
    )
    console.print(matrix_table("K^f* (filter gain)", steady.Kf))
    console.print(matrix_table("K^p* = F K^f* (prediction gain)", prediction_gain(steady.Kf, cfg.model)))
    console.print(matrix_table("M* (prior covariance)", steady.M))
    console.print(matrix_table("N* (posterior covariance)", steady.N))
    try:
        dare = riccati_prior_covariance(cfg.model)
    except (np.linalg.LinAlgError, ValueError) as exc:
        log.warning("Riccati cross-check unavailable: %s", exc)
    else:
        console.print(f"Riccati cross-check: max |M* - M_dare| = {np.max(np.abs(steady.M - dare)):.3e}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed)
    k_star = optimal_gain(cfg)
    K0 = baseline_gain(cfg, k_star)
    steps = min(args.steps, cfg.T)
    traj = simulate(cfg.model, steps, run_seed(cfg.seed, 0), x0=cfg.x0, x0_cov=cfg.x0_cov)

    graph = graph_from_state(initial_rpe_state(K0, cfg.theta0), cfg.model.F, cfg.model.H)
    built = graph_from_state(initial_rpe_state(K0, cfg.theta0), cfg.model.F, cfg.model.H)
    trace = Trace()
    for t, y in enumerate(traj.observations):
        graph, _ = execute_step(graph, y, gamma(t, cfg.rpe.gamma_schedule), cfg.rpe, trace=trace, in_place=True)
    report = audit_locality(graph, trace)

    kf_state = initial_state(cfg.model, x0=cfg.kalman_x0, N0=cfg.kalman_N0)
    dense_graph, dense_trace, _ = dense_kalman_trace(cfg.model, kf_state, traj.observations[0])
    dense_report = audit_locality(dense_graph, dense_trace)

    arch = Table(title=f"Architecture (n={cfg.n}, p={cfg.p})", expand=True)
    arch.add_column("Group", style="cyan")
    arch.add_column("Kind")
    arch.add_column("Synapses", justify="right")
    for group, kind, count in architecture_table(built):
        arch.add_row(group, kind, str(count))
    console.print(arch)

    result = Table(title="Locality audit", expand=True)
    result.add_column("Graph", style="cyan")
    result.add_column("Events", justify="right")
    result.add_column("Violations", justify="right")
    result.add_column("Supervisor interventions", justify="right")
    for label, rep in (("adaptive filter", report), ("exact Kalman step", dense_report)):
        status = "[green]0[/green]" if rep.ok else f"[red]{len(rep.violations)}[/red]"
        result.add_row(label, str(rep.events_checked), status, str(len(rep.interventions)))
    console.print(result)
    flagged = list(dict.fromkeys(v.phase for v in dense_report.violations))
    if flagged:
        console.print(f"Exact Kalman step needs non-local access in: {', '.join(flagged)}")

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "graph_edges.tsv").write_text(export_edge_list(built))
        log.info("Edge list written to %s", out_dir / "graph_edges.tsv")

    if not report.ok:
        for v in report.violations[: args.show]:
            log.error("Locality violation at step %d (%s): %s", v.step, v.phase, v.reason)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    import pytest

    targets = [str(REPO_ROOT / "tests"), str(HARNESS_DIR)]
    code = pytest.main(targets + ["-q"] + (["-x"] if args.exitfirst else []))
    return EXIT_OK if code == 0 else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Master seed overriding the config file (default: from config)",
    )
    common.add_argument(
        "--out-dir",
        default=None,
        help="Directory for output files (default: outputs.dir from config)",
    )
    common.add_argument(
        "--quiet",
        action="store_true",
        default=False,
        help="Only log warnings and suppress console tables (default: False)",
    )

    parser = argparse.ArgumentParser(description="Kalman filter experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="Run an experiment and write its metrics")
    run.add_argument("config", help="Path to the experiment YAML")
    run.add_argument(
        "--workers",
        type=int,
        default=1,
        help="Parallel runs (default: 1)",
    )
    run.set_defaults(handler=cmd_run)

    steady = sub.add_parser("steady-state", parents=[common], help="Print K*, M* and N* for the config's model")
    steady.add_argument("config", help="Path to the experiment YAML")
    steady.set_defaults(handler=cmd_steady_state)

    audit = sub.add_parser("audit", parents=[common], help="Audit the filter graph for locality")
    audit.add_argument("config", help="Path to the experiment YAML")
    audit.add_argument(
        "--steps",
        type=int,
        default=10,
        help="Graph steps to execute under the trace (default: 10)",
    )
    audit.add_argument(
        "--show",
        type=int,
        default=5,
        help="Violations to log when the graph audit fails (default: 5)",
    )
    audit.set_defaults(handler=cmd_audit)

    selftest = sub.add_parser("selftest", parents=[common], help="Run the invariant test suite")
    selftest.add_argument(
        "-x", "--exitfirst",
        action="store_true",
        default=False,
        help="Stop at the first failing test (default: False)",
    )
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    level = logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(name)s] %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )
    logging.getLogger().setLevel(level)
    console.quiet = args.quiet

    try:
        return args.handler(args)
    except ConfigError as exc:
        console.print(f"[bold red]Config error:[/bold red] {exc}")
        log.error("Config error: %s", exc)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        console.print("\n[bold red]Interrupted![/bold red] Abandoning remaining runs…")
        log.warning("KeyboardInterrupt, shutting down")
        return EXIT_INTERRUPTED
    except Exception as exc:
        console.print(f"[bold red]Failed:[/bold red] {exc}")
        log.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
