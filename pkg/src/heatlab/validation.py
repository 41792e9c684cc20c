"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .node import ActionSpace


def check_state_matrix(X, n_features: int) -> np.ndarray:
    """Encoded states as a finite float64 (N, n_features) array, N >= 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D state matrix, got {X.ndim} dimensions")
    if X.shape[0] < 1:
        raise ValueError("state matrix has no rows")
    if X.shape[1] != n_features:
        raise ValueError(f"state matrix has {X.shape[1]} features, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValueError("state matrix contains NaN or infinity")
    return X


def check_action_indices(A, space: ActionSpace) -> np.ndarray:
    """Branch index rows as an int64 (M, 4) array, each entry inside its set."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2 or A.shape[1] != 4:
        raise ValueError(f"expected (M, 4) action indices, got shape {A.shape}")
    if not np.issubdtype(A.dtype, np.integer):
        if not np.all(A == np.round(A)):
            raise ValueError("action indices must be integers")
        A = A.astype(np.int64)
    sizes = np.array(space.sizes)
    if np.any(A < 0) or np.any(A >= sizes):
        raise ValueError("action index outside its branch")
    return A.astype(np.int64)


def check_fraction(name: str, value: float, low: float = 0.0, high: float = 1.0, closed: bool = True) -> float:
    value = float(value)
    ok = low <= value <= high if closed else low < value < high
    if not ok:
        bounds = f"[{low}, {high}]" if closed else f"({low}, {high})"
        raise ValueError(f"{name}={value} outside {bounds}")
    return value


def check_is_built(estimator, attribute: str = "store_") -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
