"""Synthetic data generators with published generative forms.

Regression::

    X ~ Uniform[-1, 1]^p                       (p >= 3)
    f(x) = 2 sin(pi x_1) + x_2 - 0.5 x_3^2
    sigma(x) = 0.25 + 1.5 |x_1|   (heteroscedastic)  or  1.0   (homoscedastic)
    y = f(x) + sigma(x) * N(0, 1)

Classification: class ``k`` is ``N(mu_k, I_p)`` with the first two
coordinates of ``mu_k`` on a circle of radius ``radius``; class counts match
the requested priors exactly (largest-remainder rounding).

Outliers: inliers ``N(0, I_p)``; outliers an equal mixture of
``N((+shift, shift, 0, ...), I)`` and ``N((-shift, shift, 0, ...), I)``.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset

HOMOSCEDASTIC = "homoscedastic"
HETEROSCEDASTIC = "heteroscedastic"


def regression_mean(X):
    return 2.0 * np.sin(np.pi * X[:, 0]) + X[:, 1] - 0.5 * X[:, 2] ** 2


def noise_scale(X, kind=HETEROSCEDASTIC):
    if kind == HETEROSCEDASTIC:
        return 0.25 + 1.5 * np.abs(X[:, 0])
    if kind == HOMOSCEDASTIC:
        return np.ones(len(X))
    raise ValueError(f"unknown noise kind {kind!r}")


def synth_regression(n, seed, kind=HETEROSCEDASTIC, p=5):
    if p < 3:
        raise ValueError("the regression generator needs p >= 3")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, p))
    y = regression_mean(X) + noise_scale(X, kind) * rng.normal(size=n)
    return Dataset(X, y, meta={"generator": f"regression:{kind}", "seed": seed})


def class_counts(n, priors):
    priors = np.asarray(priors, dtype=np.float64)
    priors = priors / priors.sum()
    raw = n * priors
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return counts


def class_means(K, p, radius):
    angles = 2.0 * np.pi * np.arange(K) / K
    means = np.zeros((K, p))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def synth_classification(n, K, seed, p=2, radius=3.0, priors=None):
    if K < 2:
        raise ValueError(f"need at least 2 classes, got {K}")
    if p < 2:
        raise ValueError("the classification generator needs p >= 2")
    counts = class_counts(n, np.ones(K) if priors is None else priors)
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.repeat(np.arange(K), counts))
    X = class_means(K, p, radius)[y] + rng.normal(size=(n, p))
    return Dataset(X, y.astype(np.int64), meta={"generator": f"classification:{K}", "seed": seed})


def synth_outliers(n_in, n_out, seed, p=2, shift=2.5):
    """Inliers carry label 0 and outliers label 1; rows are shuffled."""
    rng = np.random.default_rng(seed)
    inliers = rng.normal(size=(n_in, p))
    centres = np.zeros((2, p))
    centres[:, 0] = (shift, -shift)
    centres[:, 1] = shift
    outliers = centres[rng.integers(0, 2, size=n_out)] + rng.normal(size=(n_out, p))
    X = np.vstack([inliers, outliers])
    y = np.concatenate([np.zeros(n_in, np.int64), np.ones(n_out, np.int64)])
    perm = rng.permutation(n_in + n_out)
    return Dataset(X[perm], y[perm], meta={"generator": "outliers", "seed": seed})
