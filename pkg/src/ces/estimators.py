"""scikit-learn style front-ends.

Each estimator splits its training data into a fitting part and a hold-out
part, trains one network while keeping periodic checkpoints, and then uses
the hold-out part both to choose checkpoints and to calibrate.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import methods, naive
from .losses import CrossEntropy, PinballPair, SquaredError, softmax
from .network import TrainConfig, network_for, train_with_snapshots


def split_indices(n, fraction, seed):
    """Seeded split into ``(fit_idx, holdout_idx)`` with ``round(fraction * n)`` held out."""
    n_hold = int(round(fraction * n))
    if n_hold < 1 or n_hold >= n:
        raise ValueError(f"cannot hold out {n_hold} of {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


class _CESBase(BaseEstimator):
    def __init__(self, alpha=0.1, hidden=(64, 64), t_max=100, tau=1, optimizer="adam", lr=1e-3,
                 batch_size=25, weight_decay=0.0, escal_fraction=0.25, random_state=0, store_path=None):
        self.alpha = alpha
        self.hidden = hidden
        self.t_max = t_max
        self.tau = tau
        self.optimizer = optimizer
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.escal_fraction = escal_fraction
        self.random_state = random_state
        self.store_path = store_path

    def _config(self):
        return TrainConfig(t_max=self.t_max, tau=self.tau, optimizer=self.optimizer, lr=self.lr,
                           batch_size=self.batch_size, weight_decay=self.weight_decay, seed=self.random_state)

    def _check_alpha(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def _train(self, X, y, loss, n_outputs=None):
        spec = network_for(loss, X.shape[1], tuple(self.hidden), seed=self.random_state, n_outputs=n_outputs)
        return train_with_snapshots(X, y, spec, loss, self._config(), path=self.store_path)

    def _fit_split(self, X, y, loss, n_outputs=None):
        fit_idx, hold_idx = split_indices(len(X), self.escal_fraction, self.random_state)
        self.store_ = self._train(X[fit_idx], y[fit_idx], loss, n_outputs)
        self.escal_ = methods.EsCalSet(self.store_, X[hold_idx], y[hold_idx], seed=self.random_state)
        self.n_features_in_ = X.shape[1]

    def _features(self, X):
        check_is_fitted(self, "store_")
        return check_array(X)


class CESRegressor(RegressorMixin, _CESBase):
    """Feed-forward regressor with conformal intervals from per-point checkpoint selection."""

    def __init__(self, alpha=0.1, hidden=(64, 64), t_max=100, tau=1, optimizer="adam", lr=1e-3,
                 batch_size=25, weight_decay=0.0, escal_fraction=0.25, random_state=0, store_path=None,
                 nonempty=False):
        super().__init__(alpha, hidden, t_max, tau, optimizer, lr, batch_size, weight_decay,
                         escal_fraction, random_state, store_path)
        self.nonempty = nonempty

    def fit(self, X, y):
        self._check_alpha()
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self._fit_split(X, y, SquaredError())
        return self

    def predict(self, X):
        """Point predictions of the checkpoint with the lowest hold-out loss."""
        X = self._features(X)
        return self.store_.predict_all(X)[naive.select_naive(self.escal_), :, 0]

    def predict_interval(self, X):
        """``(m, 2)`` array of interval endpoints; empty intervals come back as NaN rows."""
        X = self._features(X)
        fn = methods.ces_regression_intervals_nonempty if self.nonempty else methods.ces_regression_intervals
        return _as_bounds(fn(self.store_, self.escal_, X, self.alpha))


class CESQuantileRegressor(RegressorMixin, _CESBase):
    """Two-head quantile network calibrated with the quantile-regression conformal score."""

    def __init__(self, alpha=0.1, hidden=(64, 64, 64), t_max=100, tau=1, optimizer="adam", lr=1e-3,
                 batch_size=25, weight_decay=0.0, escal_fraction=0.25, random_state=0, store_path=None,
                 nonempty=False):
        super().__init__(alpha, hidden, t_max, tau, optimizer, lr, batch_size, weight_decay,
                         escal_fraction, random_state, store_path)
        self.nonempty = nonempty

    def fit(self, X, y):
        self._check_alpha()
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self._fit_split(X, y, PinballPair(self.alpha / 2.0, 1.0 - self.alpha / 2.0))
        return self

    def predict_quantiles(self, X):
        X = self._features(X)
        t_low, t_high = naive.select_naive_heads(self.escal_)
        out = self.store_.predict_all(X)
        return np.column_stack([out[t_low, :, 0], out[t_high, :, 1]])

    def predict(self, X):
        """Midpoint of the estimated quantile band."""
        return self.predict_quantiles(X).mean(axis=1)

    def predict_interval(self, X):
        X = self._features(X)
        fn = methods.ces_cqr_intervals_nonempty if self.nonempty else methods.ces_cqr_intervals
        return _as_bounds(fn(self.store_, self.escal_, X, self.alpha))


class CESClassifier(ClassifierMixin, _CESBase):
    """Softmax classifier with conformal prediction sets."""

    def __init__(self, alpha=0.1, hidden=(64, 64), t_max=100, tau=1, optimizer="adam", lr=1e-3,
                 batch_size=25, weight_decay=0.0, escal_fraction=0.25, random_state=0, store_path=None,
                 mode=methods.LABEL_CONDITIONAL):
        super().__init__(alpha, hidden, t_max, tau, optimizer, lr, batch_size, weight_decay,
                         escal_fraction, random_state, store_path)
        self.mode = mode

    def fit(self, X, y):
        self._check_alpha()
        X, y = check_X_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self._fit_split(X.astype(np.float64), codes, CrossEntropy(len(self.classes_)))
        return self

    def predict_proba(self, X):
        X = self._features(X)
        return softmax(self.store_.predict_all(X)[naive.select_naive(self.escal_)])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def predict_set(self, X):
        """One array of class labels per row of ``X``."""
        X = self._features(X)
        sets = methods.ces_classification_sets(self.store_, self.escal_, X, self.alpha, self.mode,
                                               seed=self.random_state)
        return [self.classes_[list(s.labels)] for s in sets]


class CESOutlierDetector(_CESBase):
    """Conformal outlier p-values.

    ``fit(X)`` trains a reconstruction network on inliers. ``fit(X, y)`` with
    ``y`` marking known outliers by 1 trains an inlier-vs-outlier classifier
    instead; in both cases only inliers are held out for calibration.
    ``predict`` returns 1 for points flagged as outliers and 0 otherwise.
    """

    def fit(self, X, y=None):
        self._check_alpha()
        X = check_array(X, dtype=np.float64)
        y = np.zeros(len(X), dtype=np.int64) if y is None else np.asarray(y).astype(np.int64)
        if y.shape != (len(X),) or not np.all(np.isin(y, (0, 1))):
            raise ValueError("y must be a 0/1 vector marking outliers")
        inliers, outliers = np.flatnonzero(y == 0), np.flatnonzero(y == 1)
        fit_pos, hold_pos = split_indices(len(inliers), self.escal_fraction, self.random_state)
        fit_idx = np.sort(np.concatenate([inliers[fit_pos], outliers]))
        if len(outliers):
            loss = CrossEntropy(2)
            self.store_ = self._train(X[fit_idx], y[fit_idx], loss)
        else:
            loss = SquaredError()
            self.store_ = self._train(X[fit_idx], X[fit_idx], loss, n_outputs=X.shape[1])
        self.escal_ = methods.outlier_escal(self.store_, X[inliers[hold_pos]])
        self.n_features_in_ = X.shape[1]
        return self

    def pvalues(self, X):
        return methods.ces_outlier_pvalues(self.store_, self.escal_, self._features(X))

    def predict(self, X):
        return (self.pvalues(X) <= self.alpha).astype(np.int64)


def _as_bounds(intervals):
    return np.array([[np.nan, np.nan] if iv.empty else [iv.lo, iv.hi] for iv in intervals])
