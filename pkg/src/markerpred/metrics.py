"""Forecasting-quality measures on millimeter-valued prediction traces.

A trace pairs predicted and true 3D positions for n_M markers over K
consecutive steps. With the per-step, per-marker Euclidean error

    delta_j(k) = || pred_j(k) - true_j(k) ||_2                       (1)

the suite computes

    rmse      = sqrt( sum_{j,k} delta_j(k)^2 / (n_M K) )             (2)
    nrmse     = sqrt( sum_{j,k} delta_j(k)^2 )
                / sqrt( sum_{j,k} || mu_j - true_j(k) ||_2^2 )       (3)
    mae       = sum_{j,k} delta_j(k) / (n_M K)                       (4)
    max_error = max_{j,k} delta_j(k)                                 (5)
    jitter    = sum_{j, k<K-1} || pred_j(k+1) - pred_j(k) ||_2
                / (n_M (K-1))                                        (6)

where mu_j is marker j's mean true position over the trace. Errors pool
across markers, never per coordinate. Jitter looks at predictions only and
is minimized by a constant prediction.

Per-condition uncertainty assumes Gaussian errors: a 95% interval
half-range 1.96 * sd / sqrt(n) from the unbiased sample standard
deviation (7), and a grid of per-condition half-ranges aggregates as
sqrt(sum of squares) / (number of cells) (8).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Z_95",
    "PredictionTrace",
    "MetricSet",
    "CiSummary",
    "instantaneous_error",
    "rmse",
    "nrmse",
    "mae",
    "max_error",
    "jitter",
    "compute_metrics",
    "ci_per_condition",
    "ci_aggregate",
]

# Two-sided 95% Gaussian quantile used for all confidence intervals.
Z_95 = 1.96


@dataclass(frozen=True)
class PredictionTrace:
    """Predicted and true marker positions in mm, both of shape
    (K, n_M, 3), covering steps k_min .. k_min + K - 1."""

    pred: np.ndarray
    true: np.ndarray
    k_min: int = 0

    def __post_init__(self):
        if self.pred.shape != self.true.shape:
            raise ValueError(
                f"pred {self.pred.shape} and true {self.true.shape} differ"
            )
        if self.pred.ndim != 3 or self.pred.shape[2] != 3:
            raise ValueError(
                f"expected shape (K, n_M, 3), got {self.pred.shape}"
            )
        if self.pred.shape[0] < 1:
            raise ValueError("trace must contain at least one step")
        if not (np.isfinite(self.pred).all() and np.isfinite(self.true).all()):
            raise ValueError("trace contains non-finite values")

    @property
    def n_steps(self) -> int:
        return self.pred.shape[0]

    @property
    def n_markers(self) -> int:
        return self.pred.shape[1]

    @property
    def k_max(self) -> int:
        return self.k_min + self.n_steps - 1


@dataclass(frozen=True)
class MetricSet:
    """All measures of definitions (2)-(6), in mm except the unitless
    nrmse."""

    mae: float
    rmse: float
    nrmse: float
    max_error: float
    jitter: float


@dataclass(frozen=True)
class CiSummary:
    """Gaussian 95% interval: mean +- half_range over n_runs values."""

    mean: float
    half_range: float
    n_runs: int


def _deltas(trace: PredictionTrace) -> np.ndarray:
    """Per-step, per-marker Euclidean errors, shape (K, n_M)."""
    return np.linalg.norm(trace.pred - trace.true, axis=2)


def instantaneous_error(trace: PredictionTrace, k: int, j: int) -> float:
    """delta_j(k) of definition (1); k is the absolute step index."""
    if not trace.k_min <= k <= trace.k_max:
        raise IndexError(f"step {k} outside [{trace.k_min}, {trace.k_max}]")
    if not 0 <= j < trace.n_markers:
        raise IndexError(f"marker {j} outside [0, {trace.n_markers})")
    row = k - trace.k_min
    return float(np.linalg.norm(trace.pred[row, j] - trace.true[row, j]))


def rmse(trace: PredictionTrace) -> float:
    """Root-mean-square error (2), pooled over markers and steps."""
    return float(np.sqrt(np.mean(_deltas(trace) ** 2)))


def nrmse(trace: PredictionTrace) -> float:
    """Normalized RMSE (3): error energy over the true signal's energy
    about its per-marker mean position.

    Raises:
        ValueError: the true signal is constant, making (3) undefined.
    """
    mu = trace.true.mean(axis=0, keepdims=True)
    denom = np.linalg.norm(trace.true - mu)
    if denom == 0.0:
        raise ValueError("nrmse undefined: true positions are constant")
    return float(np.linalg.norm(trace.pred - trace.true) / denom)


def mae(trace: PredictionTrace) -> float:
    """Mean absolute 3D error (4)."""
    return float(np.mean(_deltas(trace)))


def max_error(trace: PredictionTrace) -> float:
    """Largest per-marker error (5) over the whole trace."""
    return float(_deltas(trace).max())


def jitter(trace: PredictionTrace) -> float:
    """Mean step-to-step oscillation of the prediction (6).

    Raises:
        ValueError: fewer than two steps.
    """
    if trace.n_steps < 2:
        raise ValueError("jitter needs at least two steps")
    moves = np.linalg.norm(np.diff(trace.pred, axis=0), axis=2)
    return float(np.mean(moves))


def compute_metrics(trace: PredictionTrace) -> MetricSet:
    """Evaluate the full suite on one trace."""
    return MetricSet(
        mae=mae(trace),
        rmse=rmse(trace),
        nrmse=nrmse(trace),
        max_error=max_error(trace),
        jitter=jitter(trace),
    )


def ci_per_condition(values: np.ndarray) -> CiSummary:
    """Mean and Gaussian 95% half-range (7) of one condition's run values.

    Raises:
        ValueError: fewer than two values.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError(f"need a 1-D array of >= 2 values, got shape {values.shape}")
    n = values.size
    sd = float(values.std(ddof=1))
    return CiSummary(
        mean=float(values.mean()),
        half_range=Z_95 * sd / np.sqrt(n),
        n_runs=n,
    )


def ci_aggregate(half_ranges: np.ndarray) -> float:
    """Aggregate per-(sequence, horizon) half-ranges by rule (8):
    sqrt(sum of squares) divided by the cell count."""
    half_ranges = np.asarray(half_ranges, dtype=float)
    if half_ranges.size == 0:
        raise ValueError("cannot aggregate an empty grid")
    return float(np.sqrt(np.sum(half_ranges**2)) / half_ranges.size)
