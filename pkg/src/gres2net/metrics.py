"""Evaluation criteria: classification accuracy and the four regression
measures (root mean squared error, mean absolute error, mean absolute
percentage error, coefficient of determination).

Everything computes in float64; numpy's pairwise reductions keep the long
series (millions of points) accurate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EvalSeries", "accuracy", "rmse", "mae", "mape", "r_squared"]


@dataclass(frozen=True)
class EvalSeries:
    """Paired true and predicted value sequences of equal, nonzero length."""

    y_true: np.ndarray
    y_pred: np.ndarray

    def __post_init__(self):
        yt = np.asarray(self.y_true, dtype=np.float64).ravel()
        yp = np.asarray(self.y_pred, dtype=np.float64).ravel()
        if yt.shape != yp.shape:
            raise ValueError(f"length mismatch: {yt.shape[0]} true vs {yp.shape[0]} predicted")
        if yt.size < 1:
            raise ValueError("empty series")
        object.__setattr__(self, "y_true", yt)
        object.__setattr__(self, "y_pred", yp)


def accuracy(pred_labels, true_labels) -> float:
    """Percentage of exact label matches."""
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predicted vs {true.shape[0]} true")
    if pred.size < 1:
        raise ValueError("empty label sequences")
    return 100.0 * float(np.count_nonzero(pred == true)) / pred.size


def rmse(series: EvalSeries) -> float:
    d = series.y_true - series.y_pred
    return float(np.sqrt(np.mean(d * d)))


def mae(series: EvalSeries) -> float:
    return float(np.mean(np.abs(series.y_true - series.y_pred)))


def mape(series: EvalSeries) -> float:
    """Mean absolute percentage error; undefined (rejected) at zero targets."""
    zeros = np.flatnonzero(series.y_true == 0.0)
    if zeros.size:
        raise ValueError(f"mape undefined: y_true[{zeros[0]}] is zero")
    return 100.0 * float(np.mean(np.abs((series.y_true - series.y_pred) / series.y_true)))


def r_squared(series: EvalSeries) -> float:
    """1 minus the residual sum of squares over the total sum of squares."""
    resid = series.y_true - series.y_pred
    centered = series.y_true - series.y_true.mean()
    total = float(np.sum(centered * centered))
    if total == 0.0:
        raise ValueError("r_squared undefined: y_true is constant")
    return 1.0 - float(np.sum(resid * resid)) / total
