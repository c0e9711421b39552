"""Fit metrics and residual diagnostics: RMSE, R^2, autocorrelation, whiteness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVariance


def rmse(pred: np.ndarray, actual: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("series must have equal nonzero length")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def r_squared(pred: np.ndarray, actual: np.ndarray) -> float:
    """1 - SSE/SST about the mean of the actual series; may be negative."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("series must have equal nonzero length")
    sst = float(np.sum((actual - actual.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVariance("actual series has zero variance")
    return 1.0 - float(np.sum((actual - pred) ** 2)) / sst


@dataclass
class AutocorrSeries:
    lags: np.ndarray
    values: np.ndarray
    conf_bound: float


def autocorrelation(residuals: np.ndarray, max_lag: int) -> AutocorrSeries:
    """Biased (1/n) normalized sample autocorrelation at lags 0..max_lag."""
    x = np.asarray(residuals, dtype=float)
    n = x.size
    if n <= max_lag:
        raise ValueError("series must be longer than max_lag")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise ZeroVariance("residual series has zero variance")
    values = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        values[lag] = float(np.dot(x[: n - lag], x[lag:])) / denom
    return AutocorrSeries(
        lags=np.arange(max_lag + 1),
        values=values,
        conf_bound=1.96 / np.sqrt(n),
    )


@dataclass
class WhitenessResult:
    fraction_within: float
    passed: bool
    autocorr: AutocorrSeries


def whiteness_test(residuals: np.ndarray, max_lag: int) -> WhitenessResult:
    """Pass iff at least 95% of the lag 1..max_lag autocorrelations stay
    inside the +-1.96/sqrt(n) band."""
    ac = autocorrelation(residuals, max_lag)
    inside = np.abs(ac.values[1:]) <= ac.conf_bound
    fraction = float(np.mean(inside))
    return WhitenessResult(fraction_within=fraction, passed=fraction >= 0.95, autocorr=ac)


def rmse_decrease(two_point_rmse: float, generalized_rmse: float) -> float:
    """Percent reduction of the generalized model's RMSE over the two-point's."""
    if two_point_rmse <= 0.0:
        raise ValueError("two-point RMSE must be positive")
    return 100.0 * (1.0 - generalized_rmse / two_point_rmse)
