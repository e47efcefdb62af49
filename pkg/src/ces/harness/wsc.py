"""Worst-slab coverage: the lowest coverage over slabs ``{x : a <= v.x <= b}`` of mass >= delta.

The slab is chosen on one part of the test set and its coverage measured
on the other, so the estimate is not biased downward by the search.
"""

from __future__ import annotations

import math

import numpy as np

MIN_POINTS = 50


def _min_mean_window(cover_sorted, m, iters=60):
    """Smallest mean over windows of length >= m, one column per direction.

    Binary search on the mean theta: a window (a, b] with mean <= theta
    exists iff P[b] - theta*b <= max_{a <= b-m} (P[a] - theta*a).
    Returns the per-column minimum (upper end of the search bracket).
    """
    n, D = cover_sorted.shape
    P = np.vstack([np.zeros((1, D)), np.cumsum(cover_sorted, axis=0)])
    steps = np.arange(n + 1)[:, None]
    lo, hi = np.zeros(D), np.ones(D)
    for _ in range(iters):
        theta = 0.5 * (lo + hi)
        G = P - theta * steps
        ok = np.any(G[m:] <= np.maximum.accumulate(G, axis=0)[:n + 1 - m], axis=0)
        hi = np.where(ok, theta, hi)
        lo = np.where(ok, lo, theta)
    return hi, P


def _recover_window(P, theta, m):
    G = P - theta * np.arange(len(P))
    runmax = np.maximum.accumulate(G)
    b = m + int(np.argmax(G[m:] <= runmax[:len(P) - m]))
    a = int(np.argmax(G[:b - m + 1]))
    return a, b


def worst_slab(X, covered, delta=0.1, n_directions=1000, seed=0):
    """Direction and thresholds of the least-covered slab within ``(X, covered)``.

    Returns ``(coverage, v, a, b)``.
    """
    X = np.asarray(X, dtype=np.float64)
    covered = np.asarray(covered, dtype=np.float64)
    n = len(X)
    m = max(1, math.ceil(delta * n - 1e-9))
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(n_directions, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    Z = X @ V.T
    order = np.argsort(Z, axis=0, kind="stable")
    theta, P = _min_mean_window(covered[order], m)
    d = int(np.argmin(theta))
    a, b = _recover_window(P[:, d], theta[d], m)
    z = Z[order[:, d], d]
    return float((P[b, d] - P[a, d]) / (b - a)), V[d], float(z[a]), float(z[b - 1])


def wsc_coverage(test_features, covered_flags, delta=0.1, n_directions=1000, split_fraction=0.25, seed=0):
    """Held-out coverage of the worst slab found on a ``split_fraction`` selection part."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    X = np.asarray(test_features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    covered = np.asarray(covered_flags, dtype=bool)
    n = len(X)
    if n < MIN_POINTS:
        raise ValueError(f"worst-slab coverage needs at least {MIN_POINTS} test points, got {n}")
    if covered.shape != (n,):
        raise ValueError("need one coverage flag per test point")
    perm = np.random.default_rng(seed).permutation(n)
    n_sel = max(1, int(round(split_fraction * n)))
    sel, ev = perm[:n_sel], perm[n_sel:]
    sel_cov, v, a, b = worst_slab(X[sel], covered[sel], delta, n_directions, seed)
    z = X[ev] @ v
    inside = (z >= a) & (z <= b)
    if not np.any(inside):
        # no evaluation point falls in the slab; report the selection estimate
        return sel_cov
    return float(covered[ev][inside].mean())
