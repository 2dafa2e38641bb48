"""Summary statistics for Monte Carlo metrics."""

from typing import NamedTuple

import numpy as np
import scipy.stats


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def _as_array(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError(f"Cannot calculate {what} of an empty sequence")
    return arr


def mean(values) -> float:
    """Arithmetic mean."""
    return float(np.mean(_as_array(values, "mean")))


def median(values) -> float:
    """Median; the average of the two middle values for even lengths."""
    return float(np.median(_as_array(values, "median")))


def standard_error(values) -> float:
    """Standard error of the mean, using the sample (n − 1) variance."""
    arr = _as_array(values, "standard error")
    if arr.size < 2:
        raise ValueError("Standard error needs at least two values")
    return float(np.std(arr, ddof=1) / np.sqrt(arr.size))


def tail(values, fraction: float = 0.2) -> np.ndarray:
    """The final ``fraction`` of a sequence (at least one element)."""
    arr = _as_array(values, "tail")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    count = max(1, int(round(arr.shape[0] * fraction)))
    return arr[-count:]


def sample_covariance(samples) -> np.ndarray:
    """Covariance of the rows of a (count, d) array, mean removed, n − 1 normalised."""
    arr = np.atleast_2d(_as_array(samples, "covariance"))
    if arr.shape[0] < 2:
        raise ValueError("Covariance needs at least two samples")
    return np.atleast_2d(np.cov(arr, rowvar=False))


def relative_frobenius_error(estimate, reference) -> float:
    """‖estimate − reference‖_F / ‖reference‖_F."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = np.linalg.norm(reference)
    if scale == 0.0:
        raise ValueError("Reference matrix is zero; relative error is undefined")
    return float(np.linalg.norm(estimate - reference) / scale)


def linear_fit(xs, ys) -> LinearFit:
    """Least-squares line through (xs, ys)."""
    xs = _as_array(xs, "linear fit")
    ys = _as_array(ys, "linear fit")
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("Linear fit needs at least three paired points")
    result = scipy.stats.linregress(xs, ys)
    return LinearFit(float(result.slope), float(result.intercept), float(result.rvalue**2))


def log_linear_fit(values, steps=None) -> LinearFit:
    """Fit log(values) against step index (or ``steps``): the exponential decay rate."""
    values = _as_array(values, "log-linear fit")
    if np.any(values <= 0.0):
        raise ValueError("Log-linear fit needs strictly positive values")
    xs = np.arange(values.size, dtype=float) if steps is None else steps
    return linear_fit(xs, np.log(values))


def log_log_slope(xs, ys) -> float:
    """Slope of log(ys) against log(xs): the power-law exponent."""
    xs = _as_array(xs, "log-log slope")
    ys = _as_array(ys, "log-log slope")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("Log-log slope needs strictly positive values")
    return linear_fit(np.log(xs), np.log(ys)).slope
