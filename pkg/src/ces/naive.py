"""Greedy early stopping baselines.

One checkpoint is chosen by its hold-out loss alone and the same hold-out
set is then reused for calibration. Nominal levels are not guaranteed; the
``corrected`` helpers shrink the level using the bounds in :mod:`ces.bounds`.
A working level of 0 means "never reject": every label is kept, intervals
are the whole line.
"""

from __future__ import annotations

import math

import numpy as np

from .bounds import BoundInputs, corrected_level
from .conformal import sorted_quantile, uniform_stream
from .losses import CrossEntropy, softmax
from .methods import (LABEL_CONDITIONAL, TEST_STREAM, Interval, _check_mode, _check_pair, _label_set,
                      _outlier_pvalues_for)


def select_naive(escal):
    """Index of the checkpoint with the smallest hold-out loss (earliest on ties)."""
    return int(np.argmin(escal.losses))


def select_naive_heads(escal):
    """Separate choices for the low and the high quantile head."""
    return int(np.argmin(escal.head_losses[:, 0])), int(np.argmin(escal.head_losses[:, 1]))


def _check_level(alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0) or np.any(alpha >= 1):
        raise ValueError(f"working level must lie in [0, 1), got {alpha}")
    return alpha


# ----------------------------------------------------------------------------
# calibration of one fixed checkpoint (or one fixed pair of heads)


def fixed_outlier_pvalues(store, calset, X_test, t, inlier_class=0, tiebreak_seed=None):
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    out = store.predict_all(X_test)
    return _outlier_pvalues_for(store, calset, X_test, np.full(len(X_test), t), out, inlier_class, tiebreak_seed)


def fixed_classification_sets(store, calset, X_test, alpha, t, mode=LABEL_CONDITIONAL, seed=0, first_index=0):
    """Sets from checkpoint ``t``; ``alpha`` may be one level or one level per class."""
    alpha = _check_level(alpha)
    _check_mode(mode)
    if not isinstance(store.loss, CrossEntropy):
        raise TypeError("classification needs a CrossEntropy store")
    K = store.loss.n_classes
    probs = softmax(store.predict_all(X_test)[t])
    models = np.full(K, t)
    sets = []
    for j in range(len(probs)):
        u_test = [uniform_stream(seed, TEST_STREAM, first_index + j, y) for y in range(K)]
        sets.append(_label_set(calset, [probs[j]] * K, models, alpha, mode, u_test))
    return sets


def fixed_regression_intervals(store, calset, X_test, alpha, t):
    alpha = float(_check_level(alpha))
    mu = store.predict_all(X_test)[t, :, 0]
    q = math.inf if alpha == 0 else sorted_quantile(calset.residuals(t), alpha)
    return [Interval(float(m - q), float(m + q), pieces=(((-math.inf, math.inf), (t,), None),)) for m in mu]


def fixed_cqr_bounds(store, calset, X_test, alpha, t_low, t_high):
    """Raw ``(lo, hi)`` arrays of the calibrated quantile band; ``lo > hi`` is possible."""
    alpha = float(_check_level(alpha))
    _check_pair(store)
    out = store.predict_all(X_test)
    q = math.inf if alpha == 0 else sorted_quantile(calset.cqr_scores(t_low, t_high), alpha)
    return out[t_low, :, 0] - q, out[t_high, :, 1] + q


def as_intervals(lo, hi):
    return [Interval(float(a), float(b)) if a <= b else Interval.empty_interval() for a, b in zip(lo, hi)]


# ----------------------------------------------------------------------------
# naive early stopping: the checkpoint is chosen on the calibration set itself


def naive_outlier_pvalues(store, escal, X_test, inlier_class=0, tiebreak_seed=None):
    return fixed_outlier_pvalues(store, escal, X_test, select_naive(escal), inlier_class, tiebreak_seed)


def naive_outlier_pvalue(store, escal, z_test, inlier_class=0, tiebreak_seed=None):
    return float(naive_outlier_pvalues(store, escal, np.atleast_2d(z_test), inlier_class, tiebreak_seed)[0])


def naive_classification_sets(store, escal, X_test, alpha, mode=LABEL_CONDITIONAL, seed=0, first_index=0):
    return fixed_classification_sets(store, escal, X_test, alpha, select_naive(escal), mode, seed, first_index)


def naive_classification_set(store, escal, x_test, alpha, mode=LABEL_CONDITIONAL, seed=0, test_index=0):
    return naive_classification_sets(store, escal, np.atleast_2d(x_test), alpha, mode, seed, test_index)[0]


def naive_regression_intervals(store, escal, X_test, alpha):
    return fixed_regression_intervals(store, escal, X_test, alpha, select_naive(escal))


def naive_regression_interval(store, escal, x_test, alpha):
    return naive_regression_intervals(store, escal, np.atleast_2d(x_test), alpha)[0]


def naive_cqr_bounds(store, escal, X_test, alpha):
    return fixed_cqr_bounds(store, escal, X_test, alpha, *select_naive_heads(escal))


def naive_cqr_intervals(store, escal, X_test, alpha):
    return as_intervals(*naive_cqr_bounds(store, escal, X_test, alpha))


def naive_cqr_interval(store, escal, x_test, alpha):
    return naive_cqr_intervals(store, escal, np.atleast_2d(x_test), alpha)[0]


# ----------------------------------------------------------------------------
# level corrections


def naive_corrected_level(escal, alpha, b=100.0, c_T=1.0 / 3.0):
    """Working level for the naive method on this hold-out set."""
    return corrected_level(alpha, BoundInputs(escal.T, escal.n, alpha, b, c_T))


def class_corrected_levels(escal, n_classes, alpha, b=100.0, c_T=1.0 / 3.0):
    """Per-class working levels; each class is calibrated on its own points."""
    levels = np.zeros(n_classes)
    for y in range(n_classes):
        n_y = int(np.count_nonzero(escal.y == y))
        if n_y:
            levels[y] = corrected_level(alpha, BoundInputs(escal.T, n_y, alpha, b, c_T))
    return levels
