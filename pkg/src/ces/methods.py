"""Conformalized early stopping: per-test-point checkpoint selection plus calibration.

Every procedure picks, for the test point at hand, the checkpoint minimising
the hold-out loss augmented with the test point's own loss (ties go to the
earliest epoch), then calibrates that checkpoint on the same hold-out set.
For regression the test response is unknown, so the selection is solved for
every placeholder response at once through a lower envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import aps_scores, conformal_pvalue, noisy_score_set, sorted_quantile, uniform_block, uniform_stream
from .envelope import PARABOLA, PINBALL, concat_and_sort_knots, envelope_from_arrays
from .losses import CrossEntropy, PinballPair, SquaredError, softmax

LABEL_CONDITIONAL = "label_conditional"
MARGINAL = "marginal"

# Philox stream ids for the APS randomisation
CAL_STREAM = 0
TEST_STREAM = 1


@dataclass(frozen=True)
class Interval:
    """Closed prediction interval with extended-real endpoints.

    ``pieces`` lists ``(lo, hi, models)`` for every segment that contributed.
    """

    lo: float
    hi: float
    empty: bool = False
    fallback_used: bool = False
    pieces: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.fallback_used and self.empty:
            raise ValueError("a fallback interval cannot be empty")
        if not self.empty and self.lo > self.hi:
            raise ValueError(f"lo {self.lo} exceeds hi {self.hi}")

    @classmethod
    def empty_interval(cls, pieces=()):
        return cls(math.nan, math.nan, True, False, tuple(pieces))

    def contains(self, y):
        return (not self.empty) and self.lo <= y <= self.hi

    @property
    def width(self):
        return 0.0 if self.empty else self.hi - self.lo

    def covers(self, other):
        """True if ``other`` lies inside this interval."""
        return other.empty or (not self.empty and self.lo <= other.lo and other.hi <= self.hi)


@dataclass(frozen=True)
class LabelSet:
    labels: tuple
    pvalues: np.ndarray = field(compare=False, repr=False)

    def __contains__(self, y):
        return int(y) in self.labels

    def __len__(self):
        return len(self.labels)


class EsCalSet:
    """Hold-out set shared by model selection and calibration.

    Caches the outputs of every checkpoint on the hold-out points and the
    per-checkpoint total losses ``L[t] = sum_i loss(M_t; Z_i)``. For a
    two-head quantile store ``head_losses`` has shape ``(T, 2)``.
    ``u`` holds one uniform draw per point for randomised classification scores.
    """

    def __init__(self, store, X, y, u=None, seed=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if len(X) == 0:
            raise ValueError("empty hold-out set")
        self.loss = store.loss
        self.X = X
        self.y = self.loss.check_targets(y)
        if len(self.y) != len(X):
            raise ValueError("features and targets differ in length")
        self.outputs = store.predict_all(X)
        self.per_sample = np.stack([self.loss.per_sample(o, self.y) for o in self.outputs])
        if not np.all(np.isfinite(self.per_sample)):
            raise ValueError("non-finite hold-out loss")
        self.losses = self.per_sample.sum(axis=1)
        self.head_losses = None
        if isinstance(self.loss, PinballPair):
            self.head_losses = np.stack([self.loss.per_head(o, self.y).sum(axis=0) for o in self.outputs])
        self.u = uniform_block(seed, CAL_STREAM, len(X)) if u is None else np.asarray(u, dtype=np.float64)
        if self.u.shape != (len(X),):
            raise ValueError("need one uniform draw per hold-out point")
        self._sorted = {}

    @classmethod
    def from_store(cls, store, X, y, u=None, seed=0):
        return cls(store, X, y, u, seed)

    @property
    def n(self):
        return len(self.X)

    @property
    def T(self):
        return len(self.losses)

    def recompute_losses(self, store):
        """Totals recomputed from scratch; should match ``self.losses``."""
        from .network import eval_loss

        return np.array([eval_loss(ckpt, self.X, self.y, self.loss) for ckpt in store])

    def sorted_scores(self, key, fn):
        """Sorted calibration scores for ``key``, computed once by ``fn()``."""
        if key not in self._sorted:
            self._sorted[key] = np.sort(fn())
        return self._sorted[key]

    # score families; each is computed once per model (or model pair) and cached

    def residuals(self, t):
        return self.sorted_scores(("res", t), lambda: np.abs(self.y - self.outputs[t][:, 0]))

    def cqr_scores(self, t_low, t_high):
        def fn():
            return np.maximum(self.outputs[t_low][:, 0] - self.y, self.y - self.outputs[t_high][:, 1])
        return self.sorted_scores(("cqr", t_low, t_high), fn)

    def aps(self, t, label=None):
        """Conformity (negated APS) of hold-out points, optionally restricted to one class."""
        def fn():
            probs = softmax(self.outputs[t])
            mask = slice(None) if label is None else self.y == label
            return -aps_scores(probs[mask], self.y[mask], self.u[mask])
        return self.sorted_scores(("aps", t, label), fn)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _pvalues(sorted_cal, test_scores):
    counts = np.searchsorted(sorted_cal, test_scores, side="right")
    return (1.0 + counts) / (1.0 + len(sorted_cal))


# ----------------------------------------------------------------------------
# outlier detection


def outlier_conformity(loss, outputs, X, inlier_class=0):
    """Conformity of points assumed to be inliers (larger is more typical).

    Classifier checkpoints score by the inlier-class probability;
    reconstruction checkpoints by minus the squared reconstruction error.
    """
    if isinstance(loss, CrossEntropy):
        return softmax(outputs)[:, inlier_class]
    if isinstance(loss, SquaredError):
        return -loss.per_sample(outputs, X)
    raise TypeError(f"outlier detection needs a CrossEntropy or SquaredError store, got {loss!r}")


def outlier_targets(loss, X, inlier_class=0):
    """Training/hold-out targets that mark every row of ``X`` as an inlier."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(loss, CrossEntropy):
        return np.full(len(X), inlier_class, dtype=np.int64)
    return X


def outlier_escal(store, X, inlier_class=0):
    return EsCalSet(store, X, outlier_targets(store.loss, X, inlier_class))


def _outlier_test_losses(store, X_test, inlier_class):
    out = store.predict_all(X_test)
    targets = outlier_targets(store.loss, np.atleast_2d(X_test), inlier_class)
    losses = np.stack([store.loss.per_sample(o, targets) for o in out])
    return out, losses


def _outlier_pvalues_for(store, escal, X_test, models, out, inlier_class, tiebreak_seed):
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    pvals = np.empty(len(X_test))
    for j, t in enumerate(models):
        test = outlier_conformity(store.loss, out[t, j:j + 1], X_test[j:j + 1], inlier_class)[0]
        cal = escal.sorted_scores(("out", int(t)), lambda t=t: outlier_conformity(
            store.loss, escal.outputs[t], escal.X, inlier_class))
        if tiebreak_seed is None:
            pvals[j] = _pvalues(cal, [test])[0]
        else:
            pvals[j] = conformal_pvalue(noisy_score_set(cal, test, [tiebreak_seed, j]))
    return pvals


def select_outlier_models(store, escal, X_test, inlier_class=0):
    """Per-test-point checkpoint indices minimising the augmented loss."""
    _, losses = _outlier_test_losses(store, X_test, inlier_class)
    return np.argmin(escal.losses[:, None] + losses, axis=0)


def ces_outlier_pvalues(store, escal, X_test, inlier_class=0, tiebreak_seed=None):
    """Conformal p-values for many test points; small values flag outliers."""
    out, losses = _outlier_test_losses(store, X_test, inlier_class)
    models = np.argmin(escal.losses[:, None] + losses, axis=0)
    return _outlier_pvalues_for(store, escal, X_test, models, out, inlier_class, tiebreak_seed)


def ces_outlier_pvalue(store, escal, z_test, inlier_class=0, tiebreak_seed=None):
    return float(ces_outlier_pvalues(store, escal, np.atleast_2d(z_test), inlier_class, tiebreak_seed)[0])


# ----------------------------------------------------------------------------
# classification


def _label_set(escal, probs_by_label, models, alpha, mode, u_test):
    """Shared tail of the CES and naive set constructions for one test point."""
    K = len(models)
    pvals = np.ones(K)
    for y in range(K):
        t = int(models[y])
        if mode == LABEL_CONDITIONAL:
            if not np.any(escal.y == y):
                continue  # no calibration data for this class: keep the label
            cal = escal.aps(t, y)
        else:
            cal = escal.aps(t)
        test = -aps_scores(probs_by_label[y][None, :], [y], [u_test[y]])[0]
        pvals[y] = _pvalues(cal, [test])[0]
    labels = tuple(int(y) for y in np.flatnonzero(pvals >= alpha))
    return LabelSet(labels, pvals)


def _check_mode(mode):
    if mode not in (LABEL_CONDITIONAL, MARGINAL):
        raise ValueError(f"mode must be {LABEL_CONDITIONAL!r} or {MARGINAL!r}, got {mode!r}")


def ces_classification_sets(store, escal, X_test, alpha, mode=LABEL_CONDITIONAL, seed=0, first_index=0):
    """Prediction sets for many test points.

    Test point ``j`` draws its randomisation from index ``first_index + j``
    of the seeded test stream, so results do not depend on batching.
    """
    _check_alpha(alpha)
    _check_mode(mode)
    if not isinstance(store.loss, CrossEntropy):
        raise TypeError("classification needs a CrossEntropy store")
    K = store.loss.n_classes
    out = store.predict_all(X_test)  # (T, m, K)
    logp = out - out.max(axis=2, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=2, keepdims=True))
    probs = np.exp(logp)
    sets = []
    for j in range(out.shape[1]):
        # augmented loss with the placeholder label y: L[t] - log p_t(y | x)
        models = np.argmin(escal.losses[:, None] - logp[:, j, :], axis=0)
        u_test = [uniform_stream(seed, TEST_STREAM, first_index + j, y) for y in range(K)]
        probs_by_label = [probs[models[y], j] for y in range(K)]
        sets.append(_label_set(escal, probs_by_label, models, alpha, mode, u_test))
    return sets


def ces_classification_set(store, escal, x_test, alpha, mode=LABEL_CONDITIONAL, seed=0, test_index=0):
    return ces_classification_sets(store, escal, np.atleast_2d(x_test), alpha, mode, seed, test_index)[0]


# ----------------------------------------------------------------------------
# regression


def _clip(lo, hi, a, b):
    """``(lo, hi] ∩ [a, b]`` as a closed ``(left, right)`` pair, or None when empty."""
    if not (lo < hi and a <= b and a <= hi and b > lo):
        return None
    return max(lo, a), min(hi, b)


def _hull(pieces):
    kept = [p for p in pieces if p[2] is not None]
    if not kept:
        return Interval.empty_interval(pieces)
    return Interval(float(min(p[2][0] for p in kept)), float(max(p[2][1] for p in kept)), pieces=tuple(pieces))


def _regression_interval_at(escal, mu, alpha):
    env = envelope_from_arrays(PARABOLA, escal.losses, mu)
    pieces = []
    for lo, hi, m in env.intervals():
        q = sorted_quantile(escal.residuals(m), alpha)
        pieces.append(((lo, hi), (m,), _clip(lo, hi, mu[m] - q, mu[m] + q)))
    return _hull(pieces)


def ces_regression_intervals(store, escal, X_test, alpha):
    _check_alpha(alpha)
    mu = store.predict_all(X_test)[:, :, 0]  # (T, m)
    return [_regression_interval_at(escal, mu[:, j], alpha) for j in range(mu.shape[1])]


def ces_regression_interval(store, escal, x_test, alpha):
    return ces_regression_intervals(store, escal, np.atleast_2d(x_test), alpha)[0]


def _with_fallback(plain, naive):
    if not plain.empty:
        return plain
    if naive.empty:
        raise ValueError("fallback interval is empty")
    return Interval(naive.lo, naive.hi, False, True, plain.pieces)


def ces_regression_intervals_nonempty(store, escal, X_test, alpha):
    from .naive import naive_regression_intervals

    plain = ces_regression_intervals(store, escal, X_test, alpha)
    if all(not iv.empty for iv in plain):
        return plain
    naive = naive_regression_intervals(store, escal, X_test, alpha)
    return [_with_fallback(p, f) for p, f in zip(plain, naive)]


def ces_regression_interval_nonempty(store, escal, x_test, alpha):
    return ces_regression_intervals_nonempty(store, escal, np.atleast_2d(x_test), alpha)[0]


# ----------------------------------------------------------------------------
# conformalized quantile regression


def _cqr_interval_at(escal, q_low, q_high, alpha):
    beta_low, beta_high = escal.loss.betas
    env_low = envelope_from_arrays(PINBALL, escal.head_losses[:, 0], q_low, beta_low)
    env_high = envelope_from_arrays(PINBALL, escal.head_losses[:, 1], q_high, beta_high)
    pieces = []
    for lo, hi, ml, mh in concat_and_sort_knots(env_low, env_high).intervals():
        q = sorted_quantile(escal.cqr_scores(ml, mh), alpha)
        pieces.append(((lo, hi), (ml, mh), _clip(lo, hi, q_low[ml] - q, q_high[mh] + q)))
    return _hull(pieces)


def _check_pair(store):
    if not isinstance(store.loss, PinballPair):
        raise TypeError("quantile regression needs a PinballPair store")


def ces_cqr_intervals(store, escal, X_test, alpha):
    _check_alpha(alpha)
    _check_pair(store)
    out = store.predict_all(X_test)  # (T, m, 2)
    return [_cqr_interval_at(escal, out[:, j, 0], out[:, j, 1], alpha) for j in range(out.shape[1])]


def ces_cqr_interval(store, escal, x_test, alpha):
    return ces_cqr_intervals(store, escal, np.atleast_2d(x_test), alpha)[0]


def ces_cqr_intervals_nonempty(store, escal, X_test, alpha):
    """CES quantile intervals, with empty outputs replaced by the naive interval.

    A naive band that is itself inverted collapses to its midpoint so the
    replacement is never empty.
    """
    from .naive import naive_cqr_bounds

    plain = ces_cqr_intervals(store, escal, X_test, alpha)
    if all(not iv.empty for iv in plain):
        return plain
    lo, hi = naive_cqr_bounds(store, escal, X_test, alpha)
    mid = 0.5 * (lo + hi)
    lo, hi = np.where(lo > hi, mid, lo), np.where(lo > hi, mid, hi)
    return [_with_fallback(p, Interval(float(a), float(b))) for p, a, b in zip(plain, lo, hi)]


def ces_cqr_interval_nonempty(store, escal, x_test, alpha):
    return ces_cqr_intervals_nonempty(store, escal, np.atleast_2d(x_test), alpha)[0]
