"""Metrics, Polyak averaging and the two error-assessment protocols.

Estimation error compares the regression function of a fitted parameter
point against the generating truth's regression function on a point grid;
prediction error compares fitted predictions against held-out targets.
"""

from __future__ import annotations

import numpy as np

from .exceptions import StateError
from .gaussian import regression_mean_batch

METRIC_NAMES = ("mse", "mape", "nrmse")


def metrics(pred, truth):
    """Pointwise error metrics {mse, mape, nrmse} between two sequences.

    MAPE skips zero truth entries, reporting how many were skipped; NRMSE
    normalizes the root mean squared error by the truth's range.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ValueError("sequences must be nonempty and equally long")
    diff = pred - truth
    mse = float(np.mean(diff**2))
    nonzero = truth != 0
    skipped = int((~nonzero).sum())
    mape = float(np.mean(np.abs(diff[nonzero] / truth[nonzero]))) if nonzero.any() else float("nan")
    span = float(truth.max() - truth.min())
    if span == 0:
        raise ValueError("NRMSE undefined for constant truth")
    nrmse = float(np.sqrt(mse) / span)
    return {"mse": mse, "mape": mape, "nrmse": nrmse, "mape_skipped": skipped}


class PolyakAverager:
    """Running arithmetic mean of iterates from a designated start iteration.

    After m updates the average equals the plain mean of the m supplied
    vectors exactly, which keeps averaged variances positive.
    """

    def __init__(self, start_iteration):
        if start_iteration < 1:
            raise ValueError("start_iteration must be >= 1")
        self.start_iteration = int(start_iteration)
        self.count = 0
        self._mean = None

    def update(self, iteration, theta):
        if iteration < self.start_iteration:
            raise StateError(
                f"averaging starts at iteration {self.start_iteration}, got {iteration}"
            )
        theta = np.asarray(theta, dtype=float)
        self.count += 1
        if self._mean is None:
            self._mean = theta.copy()
        else:
            self._mean = self._mean + (theta - self._mean) / self.count
        return self

    @property
    def value(self):
        if self._mean is None:
            raise StateError("no iterates averaged yet")
        return self._mean


def polyak_path(theta_trace, start_iteration):
    """Post-hoc averaged trajectory; rows before the start are NaN.

    Row i of ``theta_trace`` is the iterate of iteration i+1; from the start
    iteration onward the output row is the running mean of rows
    start_iteration-1 .. i.
    """
    trace = np.asarray(theta_trace, dtype=float)
    out = np.full_like(trace, np.nan)
    n0 = start_iteration - 1
    if n0 >= len(trace):
        return out
    cums = np.cumsum(trace[n0:], axis=0)
    counts = np.arange(1, len(trace) - n0 + 1)[:, None]
    out[n0:] = cums / counts
    return out


def empirical_nll(family, theta, X, Y):
    """Mean per-sample negative log predictive density over a dataset."""
    X = np.asarray(X)
    if len(X) == 0:
        raise ValueError("dataset must be nonempty")
    return float(np.mean(family.loss_batch(theta, X, Y)))


def estimation_error(theta_hat, theta_truth, X_eval):
    """Metrics between fitted and true regression functions on given points."""
    pred = regression_mean_batch(theta_hat, X_eval)
    ref = regression_mean_batch(theta_truth, X_eval)
    return metrics(pred, ref)


def prediction_error(theta_hat, X_test, Y_test):
    """Metrics between fitted regression values and held-out targets."""
    pred = regression_mean_batch(theta_hat, X_test)
    return metrics(pred, np.asarray(Y_test, dtype=float).reshape(pred.shape))


def parameter_block_errors(estimate, truth):
    """Per-block parameter-space MSE between two Gaussian parameter points."""
    return {
        "omega": float(np.mean((estimate.omega - truth.omega) ** 2))
        if truth.omega.size
        else 0.0,
        "upsilon": float(np.mean((estimate.upsilon - truth.upsilon) ** 2)),
        "sigma2": float(np.mean((estimate.sigma2 - truth.sigma2) ** 2)),
    }
