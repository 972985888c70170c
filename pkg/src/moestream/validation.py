"""Input validation helpers shared by the estimator layer."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_covariates(X, expected_features=None):
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True)
    if expected_features is not None and X.shape[1] != expected_features:
        raise ValueError(
            f"X has {X.shape[1]} features, estimator was fitted with {expected_features}"
        )
    return X


def check_continuous_targets(y, n_samples):
    y = check_array(y, dtype=float, ensure_2d=False, ensure_all_finite=True)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if len(y) != n_samples:
        raise ValueError("X and y have inconsistent lengths")
    return y


def check_class_targets(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.reshape(-1)
    if len(y) != n_samples:
        raise ValueError("X and y have inconsistent lengths")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    encoded = np.searchsorted(classes, y) + 1
    return encoded, classes


def check_positive_int(value, name):
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer")
    return int(value)
