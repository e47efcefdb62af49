"""Split-conformal primitives: p-values, order-statistic quantiles, APS scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# slack for floating-point products such as (1 - 0.3) * 10 landing just off an integer
_INT_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Calibration scores and one test score.

    Scores follow the conformity convention: SMALLER means more atypical.
    """

    cal_scores: np.ndarray
    test_score: float
    noise_seed: int | None = field(default=None)

    def __post_init__(self):
        cal = np.asarray(self.cal_scores, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(cal)) and np.isfinite(self.test_score)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "cal_scores", cal)
        object.__setattr__(self, "test_score", float(self.test_score))


def conformal_pvalue(scores):
    """``(1 + #{i : cal_i <= test}) / (1 + n)``."""
    n = len(scores.cal_scores)
    if n == 0:
        raise ValueError("no calibration scores")
    return (1.0 + np.count_nonzero(scores.cal_scores <= scores.test_score)) / (1.0 + n)


def pvalues_against(cal_scores, test_scores):
    """Vectorised :func:`conformal_pvalue` for many test scores sharing one calibration set."""
    cal = np.sort(np.asarray(cal_scores, dtype=np.float64))
    counts = np.searchsorted(cal, np.asarray(test_scores, dtype=np.float64), side="right")
    return (1.0 + counts) / (1.0 + len(cal))


def quantile_rank(n, alpha):
    """``ceil((1 - alpha)(n + 1))``: the 1-based order statistic used for intervals."""
    return math.ceil((1.0 - alpha) * (n + 1) - _INT_SLACK)


def conformal_quantile(cal_scores, alpha):
    """The ``ceil((1-alpha)(n+1))``-th smallest score, or ``+inf`` if that exceeds ``n``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    scores = np.asarray(cal_scores, dtype=np.float64).reshape(-1)
    n = len(scores)
    if n == 0:
        raise ValueError("no calibration scores")
    k = quantile_rank(n, alpha)
    if k > n:
        return np.inf
    return float(np.partition(scores, k - 1)[k - 1])


def sorted_quantile(sorted_scores, alpha):
    """Same as :func:`conformal_quantile` for an already sorted array."""
    k = quantile_rank(len(sorted_scores), alpha)
    return np.inf if k > len(sorted_scores) else float(sorted_scores[k - 1])


def aps_score(probs, label, u):
    """Randomised adaptive-prediction-set nonconformity score.

    Mass of every class strictly more probable than ``label``, plus
    ``(1 - u)`` times the mass of ``label`` itself. Larger means less
    conforming; the value lies in ``[0, 1]``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    if np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    p_y = probs[label]
    return float(np.clip(probs[probs > p_y].sum() + (1.0 - u) * p_y, 0.0, 1.0))


def aps_scores(probs, labels, u):
    """Row-wise :func:`aps_score` for a ``(n, K)`` probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    p_y = probs[rows, labels]
    above = np.where(probs > p_y[:, None], probs, 0.0).sum(axis=1)
    return np.clip(above + (1.0 - np.asarray(u)) * p_y, 0.0, 1.0)


def add_tiebreak_noise(scores, seed, scale=None):
    """Add i.i.d. ``Uniform(0, scale)`` noise so ties become distinct.

    Accepts a :class:`ScoreSet` (returns a new one, calibration and test
    scores drawn from one stream) or an array. Default ``scale`` is
    ``1e-9 * (max - min + 1)``; ``scale=0`` leaves the scores unchanged.
    """
    if isinstance(scores, ScoreSet):
        return noisy_score_set(scores.cal_scores, scores.test_score, seed, scale)
    scores = np.asarray(scores, dtype=np.float64)
    if scale is None:
        scale = 1e-9 * (float(scores.max() - scores.min()) + 1.0) if scores.size else 0.0
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    if scale == 0:
        return scores.copy()
    rng = np.random.default_rng(seed)
    return scores + rng.uniform(0.0, scale, size=scores.shape)


def noisy_score_set(cal_scores, test_score, seed, scale=None):
    """ScoreSet whose calibration and test scores share one noise stream."""
    joined = np.append(np.asarray(cal_scores, dtype=np.float64), float(test_score))
    noisy = add_tiebreak_noise(joined, seed, scale)
    return ScoreSet(noisy[:-1], noisy[-1], seed)


def uniform_stream(seed, stream, index, label=0):
    """Counter-based uniform draw keyed by ``(seed, stream, index, label)``.

    Identical keys always give identical draws, independent of call order.
    """
    bitgen = np.random.Philox(key=int(seed) & ((1 << 64) - 1),
                              counter=[0, int(index), int(label), int(stream)])
    return float(np.random.Generator(bitgen).random())


def uniform_block(seed, stream, n, label=0):
    """Draws for indices ``0..n-1`` of one stream (same values as :func:`uniform_stream`)."""
    return np.array([uniform_stream(seed, stream, i, label) for i in range(n)])
