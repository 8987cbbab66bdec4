"""Input validation helpers used by the estimators and metric functions."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import ConfigError, DataError


def check_matrix(X, name: str = "X") -> np.ndarray:
    """Validate a 2-D float feature matrix: finite values, no object dtype."""
    X = np.asarray(X)
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float64)
    if X.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError(f"{name} contains NaN or infinite values")
    return X


def check_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Validate a binary 0/1 label vector, returned as float64."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DataError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise DataError(f"{name} has {y.shape[0]} rows, expected {n}")
    vals = np.unique(y)
    if not np.isin(vals, (0, 1)).all():
        raise DataError(f"{name} must contain only 0/1 labels")
    return y.astype(np.float64)


def check_scores(scores, name: str = "scores") -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise DataError(f"{name} must be 1-dimensional")
    if not np.isfinite(scores).all():
        raise DataError(f"{name} contains NaN or infinite values")
    return scores


def check_unit_interval(value: float, name: str, open_ends: bool = False) -> float:
    value = float(value)
    if open_ends and not (0.0 < value < 1.0):
        raise ConfigError(f"{name} must lie strictly inside (0, 1), got {value}")
    if not open_ends and not (0.0 <= value <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def check_fitted(estimator, attribute: str) -> None:
    """Raise NotFittedError unless ``estimator`` carries ``attribute``."""
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
