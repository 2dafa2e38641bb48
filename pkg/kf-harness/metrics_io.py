"""Metrics CSV, summary JSON and trajectory CSV sinks.

Floats are written with ``repr``, which is the shortest decimal string that
parses back to the identical double, so a re-read is bitwise exact.
"""

import csv
import json
import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

METRICS_HEADER = ("t", "mse_classic", "mse_rpe", "gain_err", "theta", "lambda_cond", "flags")
FLAG_SEPARATOR = "|"


class MetricsIoError(Exception):
    """Raised when a metrics or summary file cannot be written or read."""


@dataclass(frozen=True)
class MetricsRow:
    t: int
    mse_classic: float
    mse_rpe: float
    gain_err: float
    theta: float
    lambda_cond: float
    flags: tuple[str, ...] = ()


def format_row(row: MetricsRow) -> list[str]:
    return [
        str(row.t),
        repr(float(row.mse_classic)),
        repr(float(row.mse_rpe)),
        repr(float(row.gain_err)),
        repr(float(row.theta)),
        repr(float(row.lambda_cond)),
        FLAG_SEPARATOR.join(row.flags),
    ]


def parse_row(fields: list[str]) -> MetricsRow:
    if len(fields) != len(METRICS_HEADER):
        raise MetricsIoError(f"expected {len(METRICS_HEADER)} columns, got {len(fields)}")
    t, mse_classic, mse_rpe, gain_err, theta, lambda_cond, flags = fields
    return MetricsRow(
        t=int(t),
        mse_classic=float(mse_classic),
        mse_rpe=float(mse_rpe),
        gain_err=float(gain_err),
        theta=float(theta),
        lambda_cond=float(lambda_cond),
        flags=tuple(flags.split(FLAG_SEPARATOR)) if flags else (),
    )


def write_metrics(rows: Iterable[MetricsRow], path: str | Path) -> int:
    """Write the header and one line per row; returns the number of rows."""
    path = Path(path)
    count = 0
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            for row in rows:
                writer.writerow(format_row(row))
                count += 1
    except OSError as exc:
        raise MetricsIoError(f"cannot write metrics to {path}: {exc}") from exc
    logger.debug("Wrote %d metric rows to %s", count, path)
    return count


def read_metrics(path: str | Path) -> list[MetricsRow]:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != METRICS_HEADER:
                raise MetricsIoError(f"{path} does not start with the metrics header")
            rows = []
            for line_no, fields in enumerate(reader, start=2):
                try:
                    rows.append(parse_row(fields))
                except ValueError as exc:
                    raise MetricsIoError(f"{path}:{line_no}: {exc}") from exc
            return rows
    except OSError as exc:
        raise MetricsIoError(f"cannot read metrics from {path}: {exc}") from exc


def split_runs(rows: list[MetricsRow]) -> list[list[MetricsRow]]:
    """Split a multi-run metrics stream at every t == 0."""
    runs: list[list[MetricsRow]] = []
    for row in rows:
        if row.t == 0 or not runs:
            runs.append([])
        runs[-1].append(row)
    return runs


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

def _json_value(value):
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def format_summary(summary: dict) -> str:
    """Flat JSON object with sorted keys; non-finite numbers become null."""
    clean = {key: _json_value(value) for key, value in summary.items()}
    return json.dumps(clean, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_summary(summary: dict, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(format_summary(summary))
    except OSError as exc:
        raise MetricsIoError(f"cannot write summary to {path}: {exc}") from exc


def read_summary(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise MetricsIoError(f"cannot read summary from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MetricsIoError(f"{path} is not a summary document: {exc}") from exc


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    run: int
    states: np.ndarray
    observations: np.ndarray
    xhat_classic: np.ndarray
    xhat_rpe: np.ndarray


def trajectory_header(n: int, p: int) -> list[str]:
    return (
        ["run", "t"]
        + [f"x_{i}" for i in range(n)]
        + [f"y_{j}" for j in range(p)]
        + [f"xhat_classic_{i}" for i in range(n)]
        + [f"xhat_rpe_{i}" for i in range(n)]
    )


def write_trajectory(records: Iterable[TrajectoryRecord], path: str | Path, n: int, p: int) -> None:
    """One line per (run, t): true state, observation and both filter estimates."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(trajectory_header(n, p))
            for rec in records:
                stacked = np.hstack([rec.states, rec.observations, rec.xhat_classic, rec.xhat_rpe])
                for t, values in enumerate(stacked):
                    writer.writerow([str(rec.run), str(t)] + [repr(float(v)) for v in values])
    except OSError as exc:
        raise MetricsIoError(f"cannot write trajectory to {path}: {exc}") from exc
