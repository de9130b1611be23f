"""Linear read-out probes over frozen representations.

A probe is a ridge-regularized least-squares classifier fit on signed
targets. It measures how linearly readable a label is from a block of
representations; training the probe does not touch the representations.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def fit_linear_probe(features, labels, l2=1e-3):
    """Ridge regression of +/-1 targets on features plus a bias column.

    Solves (X^T X + l2 I) w = X^T y in closed form. The bias column is
    not regularized. Returns (weights, bias).
    """
    x = np.asarray(features, dtype=np.float64)
    y01 = np.asarray(labels)
    if x.ndim != 2 or y01.shape != (x.shape[0],):
        raise ConfigurationError("probe expects a 2-D feature matrix and 1-D labels")
    if x.shape[0] < 2 or len(np.unique(y01)) < 2:
        raise ConfigurationError("probe needs at least two samples and both classes")
    y = np.where(y01 > 0, 1.0, -1.0)
    ones = np.ones((x.shape[0], 1), dtype=np.float64)
    xb = np.concatenate([x, ones], axis=1)
    gram = xb.T @ xb
    reg = np.eye(xb.shape[1]) * float(l2)
    reg[-1, -1] = 0.0
    coef = np.linalg.solve(gram + reg, xb.T @ y)
    return coef[:-1], float(coef[-1])


def probe_predict(weights, bias, features):
    x = np.asarray(features, dtype=np.float64)
    return (x @ weights + bias >= 0.0).astype(np.int64)


def probe_accuracy(weights, bias, features, labels):
    pred = probe_predict(weights, bias, features)
    truth = np.asarray(labels).astype(np.int64)
    return float(np.mean(pred == truth))


def probe_readout(train_x, train_y, test_x, test_y, l2=1e-3):
    """Fit on the training block, report held-out accuracy."""
    w, b = fit_linear_probe(train_x, train_y, l2=l2)
    return probe_accuracy(w, b, test_x, test_y)
