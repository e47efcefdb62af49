"""Additive per-sample losses and their gradients with respect to network outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def softmax(logits):
    """Row-wise softmax of a (n, K) logit matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def pinball(y, yhat, beta):
    """Pinball loss rho_beta(y, yhat), elementwise."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64)
    return np.where(diff > 0, beta * diff, (beta - 1.0) * diff)


def _pinball_grad(y, yhat, beta):
    # d rho / d yhat; subgradient (1 - beta) at the kink
    diff = y - yhat
    return np.where(diff > 0, -beta, 1.0 - beta)


class LossKind:
    """Base class. Subclasses define ``per_sample`` and ``output_grad``.

    ``per_sample(outputs, targets)`` returns one nonnegative loss per row and
    ``output_grad`` its derivative with respect to ``outputs``.
    """

    tag = 0
    n_outputs = None  # None means any width

    def params(self):
        return (0.0, 0.0)

    def check_targets(self, targets):
        targets = np.asarray(targets, dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise ValueError("targets contain non-finite values")
        return targets


@dataclass(frozen=True)
class SquaredError(LossKind):
    """Sum of squared errors over output columns.

    With targets equal to the inputs this is the reconstruction loss of an
    autoencoder-style one-class model.
    """

    tag = 1

    def per_sample(self, outputs, targets):
        targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
        return ((targets - outputs) ** 2).sum(axis=1)

    def output_grad(self, outputs, targets):
        targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
        return 2.0 * (outputs - targets)


@dataclass(frozen=True)
class CrossEntropy(LossKind):
    n_classes: int = 2

    tag = 2

    def __post_init__(self):
        if int(self.n_classes) < 2:
            raise ValueError(f"CrossEntropy needs at least 2 classes, got {self.n_classes}")

    @property
    def n_outputs(self):
        return int(self.n_classes)

    def params(self):
        return (float(self.n_classes), 0.0)

    def check_targets(self, targets):
        targets = np.asarray(targets)
        labels = targets.astype(np.int64)
        if targets.ndim != 1 or np.any(labels != targets):
            raise ValueError("CrossEntropy targets must be a 1-d array of class indices")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"class index out of range [0, {self.n_classes})")
        return labels

    def per_sample(self, outputs, targets):
        labels = np.asarray(targets, dtype=np.int64)
        logp = log_softmax(outputs)
        return -logp[np.arange(len(labels)), labels]

    def output_grad(self, outputs, targets):
        labels = np.asarray(targets, dtype=np.int64)
        grad = softmax(outputs)
        grad[np.arange(len(labels)), labels] -= 1.0
        return grad


@dataclass(frozen=True)
class Pinball(LossKind):
    beta: float = 0.5

    tag = 3
    n_outputs = 1

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    def params(self):
        return (float(self.beta), 0.0)

    def per_sample(self, outputs, targets):
        return pinball(np.ravel(targets), outputs[:, 0], self.beta)

    def output_grad(self, outputs, targets):
        return _pinball_grad(np.ravel(targets), outputs[:, 0], self.beta)[:, None]


@dataclass(frozen=True)
class PinballPair(LossKind):
    """Two quantile heads trained jointly; column 0 is the low quantile."""

    beta_low: float = 0.05
    beta_high: float = 0.95

    tag = 4
    n_outputs = 2

    def __post_init__(self):
        if not 0.0 < self.beta_low < self.beta_high < 1.0:
            raise ValueError("need 0 < beta_low < beta_high < 1")

    def params(self):
        return (float(self.beta_low), float(self.beta_high))

    @property
    def betas(self):
        return (self.beta_low, self.beta_high)

    def per_head(self, outputs, targets):
        """(n, 2) matrix of pinball losses, one column per quantile level."""
        y = np.ravel(targets)
        return np.column_stack([pinball(y, outputs[:, 0], self.beta_low),
                                pinball(y, outputs[:, 1], self.beta_high)])

    def per_sample(self, outputs, targets):
        return self.per_head(outputs, targets).sum(axis=1)

    def output_grad(self, outputs, targets):
        y = np.ravel(targets)
        return np.column_stack([_pinball_grad(y, outputs[:, 0], self.beta_low),
                                _pinball_grad(y, outputs[:, 1], self.beta_high)])


_BY_TAG = {cls.tag: cls for cls in (SquaredError, CrossEntropy, Pinball, PinballPair)}


def loss_from_tag(tag, p0, p1):
    """Inverse of ``(loss.tag, *loss.params())``; used by the checkpoint reader."""
    try:
        cls = _BY_TAG[tag]
    except KeyError:
        raise ValueError(f"unknown loss tag {tag}") from None
    if cls is SquaredError:
        return SquaredError()
    if cls is CrossEntropy:
        return CrossEntropy(int(p0))
    if cls is Pinball:
        return Pinball(p0)
    return PinballPair(p0, p1)
