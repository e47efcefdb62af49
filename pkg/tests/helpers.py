"""Hand-built stores and independent oracles shared by the test modules."""

import math

import numpy as np

from ces.losses import CrossEntropy, Pinball, PinballPair, SquaredError, pinball, softmax
from ces.network import CheckpointStore, NetworkSpec, loss_and_grad


def linear_store(loss, rows_per_model, n_features):
    """Store of linear nets ``x -> x @ W + b`` from ``(W, b)`` pairs."""
    n_out = np.atleast_2d(rows_per_model[0][0]).shape[1]
    spec = NetworkSpec((n_features, n_out))
    weights = [np.concatenate([np.ravel(np.asarray(W, float)), np.ravel(np.asarray(b, float))])
               for W, b in rows_per_model]
    return CheckpointStore.from_weights(spec, loss, weights)


def constant_store(values, loss=None, n_features=1):
    """Models that ignore their input and output one constant each."""
    loss = loss or SquaredError()
    vals = [np.atleast_1d(np.asarray(v, float)) for v in values]
    return linear_store(loss, [(np.zeros((n_features, len(v))), v) for v in vals], n_features)


def table_store(loss, tables):
    """Models given by their output on each one-hot input ``e_i``.

    ``tables[t]`` has shape ``(m, n_out)``; feed ``np.eye(m)[i]`` to get row ``i``.
    """
    tables = [np.atleast_2d(np.asarray(tb, float)) for tb in tables]
    m = tables[0].shape[0]
    return linear_store(loss, [(tb, np.zeros(tb.shape[1])) for tb in tables], m)


def onehot(m, rows):
    return np.eye(m)[np.asarray(rows)]


# ----------------------------------------------------------------------------
# brute-force oracles, written without the envelope or the library's selection code


def conformal_rank(n, alpha):
    return math.ceil((1 - alpha) * (n + 1) - 1e-9)


def oracle_quantile(scores, alpha):
    k = conformal_rank(len(scores), alpha)
    return math.inf if k > len(scores) else sorted(scores)[k - 1]


def oracle_regression_accept(mu_cal, y_cal, mu_test, y, alpha):
    """Is placeholder ``y`` accepted? ``mu_cal`` is (T, n), ``mu_test`` (T,)."""
    T = len(mu_test)
    aug = [sum((y_cal[i] - mu_cal[t][i]) ** 2 for i in range(len(y_cal))) + (y - mu_test[t]) ** 2
           for t in range(T)]
    t = min(range(T), key=lambda s: (aug[s], s))
    q = oracle_quantile([abs(y_cal[i] - mu_cal[t][i]) for i in range(len(y_cal))], alpha)
    return mu_test[t] - q <= y <= mu_test[t] + q


def oracle_cqr_accept(lo_cal, hi_cal, y_cal, lo_test, hi_test, y, alpha, betas):
    T = len(lo_test)
    b_lo, b_hi = betas
    aug_lo = [float(np.sum(pinball(y_cal, lo_cal[t], b_lo))) + float(pinball(y, lo_test[t], b_lo)) for t in range(T)]
    aug_hi = [float(np.sum(pinball(y_cal, hi_cal[t], b_hi))) + float(pinball(y, hi_test[t], b_hi)) for t in range(T)]
    tl = min(range(T), key=lambda s: (aug_lo[s], s))
    th = min(range(T), key=lambda s: (aug_hi[s], s))
    q = oracle_quantile([max(lo_cal[tl][i] - y_cal[i], y_cal[i] - hi_cal[th][i]) for i in range(len(y_cal))], alpha)
    return lo_test[tl] - q <= y <= hi_test[th] + q


def accepted_hull(accept, grid):
    ok = [y for y in grid if accept(y)]
    return (min(ok), max(ok)) if ok else None


# ----------------------------------------------------------------------------
# gradient check


def finite_difference_check(spec, loss, X, y, n_coords=100, h=1e-5, seed=0):
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=0.5, size=spec.n_weights)
    _, grad = loss_and_grad(spec, w, X, y, loss)
    coords = rng.choice(spec.n_weights, size=min(n_coords, spec.n_weights), replace=False)
    worst = 0.0
    for k in coords:
        wp, wm = w.copy(), w.copy()
        wp[k] += h
        wm[k] -= h
        num = (loss_and_grad(spec, wp, X, y, loss)[0] - loss_and_grad(spec, wm, X, y, loss)[0]) / (2 * h)
        scale = max(abs(num), abs(grad[k]), 1e-6)
        worst = max(worst, abs(num - grad[k]) / scale)
    return worst


def gradient_cases(seed=0):
    """One (spec, loss, X, y) case per loss kind."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 4))
    return [
        (NetworkSpec((4, 6, 5, 1), seed=1), SquaredError(), X, rng.normal(size=12)),
        (NetworkSpec((4, 6, 5, 4), seed=1), SquaredError(), X, rng.normal(size=(12, 4))),
        (NetworkSpec((4, 6, 5, 3), seed=1), CrossEntropy(3), X, rng.integers(0, 3, size=12)),
        (NetworkSpec((4, 6, 5, 1), seed=1), Pinball(0.3), X, rng.normal(size=12)),
        (NetworkSpec((4, 6, 5, 2), seed=1), PinballPair(0.1, 0.9), X, rng.normal(size=12)),
    ]


def probs_of(logits):
    return softmax(np.atleast_2d(logits))
