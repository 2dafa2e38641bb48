"""Tests for the statistics module."""
import math

import numpy as np
import pytest

from src.stats import (
    linear_fit,
    log_linear_fit,
    log_log_slope,
    mean,
    median,
    relative_frobenius_error,
    sample_covariance,
    standard_error,
    tail,
)


# --- mean ---

def test_mean_basic():
    assert mean([1, 2, 3, 4, 5]) == 3.0


def test_mean_floats():
    assert math.isclose(mean([1.5, 2.5, 3.0]), 7.0 / 3)


def test_mean_empty_raises():
    with pytest.raises(ValueError):
        mean([])


# --- median ---

def test_median_odd_length():
    assert median([3, 1, 2]) == 2.0


def test_median_even_length():
    assert median([1, 2, 3, 4]) == 2.5


def test_median_ignores_outlier():
    assert median([0.01, 0.02, 1e6]) == 0.02


def test_median_empty_raises():
    with pytest.raises(ValueError):
        median([])


# --- standard_error ---

def test_standard_error_basic():
    # sample std of [2, 4, 4, 4, 5, 5, 7, 9] is sqrt(32/7)
    assert math.isclose(standard_error([2, 4, 4, 4, 5, 5, 7, 9]), math.sqrt(32 / 7) / math.sqrt(8))


def test_standard_error_identical_values():
    assert standard_error([3.0, 3.0, 3.0]) == 0.0


def test_standard_error_needs_two_values():
    with pytest.raises(ValueError):
        standard_error([1.0])


# --- tail ---

def test_tail_final_fifth():
    np.testing.assert_array_equal(tail(np.arange(10), 0.2), [8, 9])


def test_tail_keeps_at_least_one():
    np.testing.assert_array_equal(tail([1.0, 2.0], 0.01), [2.0])


def test_tail_rejects_bad_fraction():
    with pytest.raises(ValueError):
        tail([1.0, 2.0], 0.0)


# --- sample_covariance / relative_frobenius_error ---

def test_sample_covariance_two_columns():
    samples = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
    np.testing.assert_allclose(sample_covariance(samples), [[4.0, 8.0], [8.0, 16.0]])


def test_sample_covariance_single_column_is_2d():
    assert sample_covariance(np.array([[1.0], [3.0]])).shape == (1, 1)


def test_relative_frobenius_error():
    assert math.isclose(relative_frobenius_error([[1.1, 0.0], [0.0, 1.0]], np.eye(2)), 0.1 / math.sqrt(2))


def test_relative_frobenius_error_zero_reference():
    with pytest.raises(ValueError):
        relative_frobenius_error(np.eye(2), np.zeros((2, 2)))


# --- fits ---

def test_linear_fit_exact_line():
    fit = linear_fit([0, 1, 2, 3], [1.0, 3.0, 5.0, 7.0])
    assert math.isclose(fit.slope, 2.0)
    assert math.isclose(fit.intercept, 1.0)
    assert math.isclose(fit.r2, 1.0)


def test_linear_fit_needs_three_points():
    with pytest.raises(ValueError):
        linear_fit([0, 1], [0, 1])


def test_log_linear_fit_geometric_decay():
    fit = log_linear_fit(0.5 ** np.arange(20))
    assert math.isclose(fit.slope, math.log(0.5))
    assert fit.r2 > 0.999999


def test_log_linear_fit_rejects_non_positive():
    with pytest.raises(ValueError):
        log_linear_fit([1.0, 0.0, 0.5])


def test_log_log_slope_quadratic():
    xs = np.array([1e-1, 1e-2, 1e-3])
    assert math.isclose(log_log_slope(xs, 3.0 * xs**2), 2.0)
