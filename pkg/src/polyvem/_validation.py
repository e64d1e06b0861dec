"""Input checks shared by the estimator layer."""
from __future__ import annotations

import numpy as np

from .exceptions import BadParams, OutsideDomain


def check_points(X, name: str = "X") -> np.ndarray:
    """Finite (n, 2) float array of points in the closed unit square."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.shape[0] == 2:
        X = X.reshape(1, 2)
    if X.ndim != 2 or X.shape[1] != 2:
        raise BadParams(f"{name} must have shape (n_points, 2), got {X.shape}")
    if len(X) == 0:
        raise BadParams(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise BadParams(f"{name} contains non-finite values")
    if np.any(X < -1e-12) or np.any(X > 1 + 1e-12):
        raise OutsideDomain(f"{name} has points outside the unit square")
    return X


def check_targets(y, n: int, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (n,):
        raise BadParams(f"{name} must have {n} entries, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise BadParams(f"{name} contains non-finite values")
    return y


def check_alpha(alpha):
    if isinstance(alpha, str):
        if alpha != "auto":
            raise BadParams(f"alpha must be 'auto' or a positive number, got {alpha!r}")
        return alpha
    a = float(alpha)
    if not (np.isfinite(a) and a > 0):
        raise BadParams(f"alpha must be positive, got {alpha!r}")
    return a


def check_nonnegative(value, name: str) -> float:
    v = float(value)
    if not (np.isfinite(v) and v >= 0):
        raise BadParams(f"{name} must be a non-negative number, got {value!r}")
    return v


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise BadParams(f"{type(estimator).__name__} is not fitted; call fit first")
