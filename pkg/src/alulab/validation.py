"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from alulab.errors import ConfigError, DimensionError, NotTrainedError


def check_features(X, n_features: int | None = None, name: str = "X") -> tuple[np.ndarray, bool]:
    """Return ``X`` as a C-contiguous float32 matrix and whether it was a single row."""
    arr = np.asarray(X.data if hasattr(X, "data") and not isinstance(X, np.ndarray) else X)
    if arr.ndim == 1:
        arr, single = arr[None, :], True
    elif arr.ndim == 2:
        single = False
    else:
        raise DimensionError(f"{name} must be a vector or a matrix, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ConfigError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if n_features is not None and arr.shape[1] != n_features:
        raise DimensionError(f"{name} has {arr.shape[1]} features, model expects {n_features}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains NaN or Inf")
    return arr, single


def check_labels(y, n_samples: int, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim == 0:
        labels = labels[None]
    if labels.shape != (n_samples,):
        raise DimensionError(f"expected {n_samples} labels, got shape {labels.shape}")
    if labels.size and not np.all(np.equal(np.mod(labels, 1), 0)):
        raise ConfigError("labels must be integer class indices")
    labels = labels.astype(np.int64)
    if n_classes is not None and labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise IndexError(f"label {bad} outside [0, {n_classes})")
    return labels


def check_nonempty(X, what: str = "data") -> None:
    if len(X) == 0:
        raise ConfigError(f"{what} is empty")


def check_trained(model, attr: str = "params_") -> None:
    if getattr(model, attr, None) is None:
        raise NotTrainedError(f"{type(model).__name__} is not trained; call fit() first")
