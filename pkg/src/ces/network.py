"""Dense ReLU networks trained by minibatch gradient descent with periodic snapshots.

Weights live in one flat float64 vector. Layer ``l`` occupies a contiguous
block holding its ``(fan_in, fan_out)`` weight matrix in row-major order
followed by its ``fan_out`` biases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .losses import CrossEntropy, LossKind, PinballPair, SquaredError

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch, message="non-finite training loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must hold >= 2 positive sizes, got {self.layer_sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    @property
    def offsets(self):
        """Start offset of each layer block, plus the total length at the end."""
        out = [0]
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append(out[-1] + fan_in * fan_out + fan_out)
        return out

    @property
    def n_weights(self):
        return self.offsets[-1]

    def unpack(self, weights):
        """List of ``(W, b)`` views into a flat weight vector."""
        layers = []
        offs = self.offsets
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            start = offs[l]
            W = weights[start:start + fan_in * fan_out].reshape(fan_in, fan_out)
            b = weights[start + fan_in * fan_out:offs[l + 1]]
            layers.append((W, b))
        return layers

    def check_loss(self, loss):
        want = loss.n_outputs
        if want is not None and want != self.n_outputs:
            raise ValueError(f"{type(loss).__name__} needs {want} outputs, network has {self.n_outputs}")


def init_weights(spec):
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights = np.zeros(spec.n_weights)
    for W, b in spec.unpack(weights):
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return weights


@dataclass(frozen=True)
class TrainConfig:
    t_max: int = 100
    tau: int = 1
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 25
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.t_max < 1 or not 1 <= self.tau <= self.t_max:
            raise ValueError(f"need 1 <= tau <= t_max, got tau={self.tau}, t_max={self.t_max}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    @property
    def n_checkpoints(self):
        return self.t_max // self.tau


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    weights: np.ndarray
    spec: NetworkSpec

    def __post_init__(self):
        if np.shape(self.weights) != (self.spec.n_weights,):
            raise ValueError(f"expected {self.spec.n_weights} weights, got {np.shape(self.weights)}")

    def __eq__(self, other):
        return (isinstance(other, Checkpoint) and self.epoch == other.epoch
                and self.spec == other.spec and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.epoch, self.spec))


@dataclass(eq=False)
class CheckpointStore:
    """Ordered snapshots ``M_{t_1}, ..., M_{t_T}`` of one training run.

    ``weights`` is a ``(T, n_weights)`` array; it may be a read-only
    memory map when the store was loaded from disk.
    """

    spec: NetworkSpec
    loss: LossKind
    tau: int
    t_max: int
    epochs: np.ndarray
    weights: np.ndarray
    config: TrainConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=np.int64)
        if self.weights.ndim != 2 or self.weights.shape != (len(self.epochs), self.spec.n_weights):
            raise ValueError("weights must have shape (T, n_weights)")
        if len(self.epochs) < 1:
            raise ValueError("empty checkpoint store")
        if np.any(np.diff(self.epochs) <= 0):
            raise ValueError("checkpoint epochs must be strictly increasing")
        self.spec.check_loss(self.loss)

    @classmethod
    def from_weights(cls, spec, loss, weights, epochs=None, tau=1):
        """Build a store from hand-made weight vectors (useful for tests)."""
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if epochs is None:
            epochs = tau * np.arange(1, len(weights) + 1)
        return cls(spec, loss, tau, int(epochs[-1]), np.asarray(epochs), weights)

    def __len__(self):
        return len(self.epochs)

    @property
    def T(self):
        return len(self.epochs)

    def __getitem__(self, t):
        return Checkpoint(int(self.epochs[t]), np.array(self.weights[t]), self.spec)

    def __iter__(self):
        for t in range(len(self)):
            yield self[t]

    def __eq__(self, other):
        return (isinstance(other, CheckpointStore) and self.spec == other.spec
                and self.loss == other.loss and self.tau == other.tau
                and self.t_max == other.t_max and np.array_equal(self.epochs, other.epochs)
                and np.array_equal(self.weights, other.weights))

    def predict_all(self, X):
        """Outputs of every stored model, shape ``(T, n, n_outputs)``."""
        X = _as_features(X, self.spec)
        return np.stack([_forward(self.spec, self.weights[t], X) for t in range(len(self))])


def _as_features(X, spec):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(f"expected {spec.n_inputs} features, got shape {np.shape(X)}")
    return X


def _forward(spec, weights, X, cache=None):
    h = X
    layers = spec.unpack(weights)
    for l, (W, b) in enumerate(layers):
        z = h @ W + b
        if l < len(layers) - 1:
            if cache is not None:
                cache.append((h, z))
            h = np.maximum(z, 0.0)
        else:
            if cache is not None:
                cache.append((h, z))
            h = z
    return h


def forward(ckpt, x):
    """Raw network outputs for one feature vector (1-d) or a batch (2-d).

    For classifiers these are logits; use :func:`ces.losses.softmax`.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    out = _forward(ckpt.spec, np.asarray(ckpt.weights, dtype=np.float64), _as_features(x_arr, ckpt.spec))
    return out[0] if x_arr.ndim == 1 else out


def loss_and_grad(spec, weights, X, y, loss):
    """Summed loss over the batch and its gradient with respect to the flat weights."""
    cache = []
    out = _forward(spec, weights, X, cache)
    total = float(loss.per_sample(out, y).sum())
    delta = loss.output_grad(out, y)
    grad = np.zeros_like(weights)
    grads = spec.unpack(grad)
    layers = spec.unpack(weights)
    for l in range(len(layers) - 1, -1, -1):
        h_in, z = cache[l]
        if l < len(layers) - 1:
            delta = delta * (z > 0)
        gW, gb = grads[l]
        gW[...] = h_in.T @ delta
        gb[...] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ layers[l][0].T
    return total, grad


def eval_loss(ckpt, X, y, loss):
    """Additive loss: the SUM of per-sample losses over the dataset."""
    X = _as_features(X, ckpt.spec)
    if len(X) == 0:
        raise ValueError("empty dataset")
    y = loss.check_targets(y)
    per = loss.per_sample(_forward(ckpt.spec, np.asarray(ckpt.weights, dtype=np.float64), X), y)
    if not np.all(np.isfinite(per)):
        raise ValueError("non-finite per-sample loss")
    return float(per.sum())


class _Adam:
    def __init__(self, n, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.k = 0

    def step(self, w, g):
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.k)
        vhat = self.v / (1 - self.b2 ** self.k)
        w -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, w, g):
        w -= self.lr * g


def train_with_snapshots(X, y, spec, loss, cfg, path=None, initial_weights=None):
    """Train for ``cfg.t_max`` epochs, keeping the model every ``cfg.tau`` epochs.

    Minibatch gradients are averaged over the batch. When ``path`` is given
    the snapshots are streamed to a checkpoint file and the returned store
    is memory-mapped from it; otherwise they are kept in memory.
    """
    from .storage import StoreWriter, load_store

    spec.check_loss(loss)
    X = _as_features(X, spec)
    y = loss.check_targets(y)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
    if isinstance(loss, SquaredError) and y.ndim == 1 and spec.n_outputs != 1:
        raise ValueError("1-d targets need a single-output network")

    w = init_weights(spec) if initial_weights is None else np.array(initial_weights, dtype=np.float64)
    if cfg.optimizer == "adam":
        opt = _Adam(len(w), cfg.lr, cfg.betas, cfg.eps)
    else:
        opt = _SGD(cfg.lr)
    decay_mask = np.zeros_like(w)
    for W, _ in spec.unpack(decay_mask):
        W[...] = 1.0

    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    T = cfg.n_checkpoints
    writer = StoreWriter(path, spec, loss, cfg.tau, cfg.t_max, T) if path is not None else None
    epochs, snaps = [], []
    try:
        for epoch in range(1, cfg.t_max + 1):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                total, grad = loss_and_grad(spec, w, X[idx], y[idx], loss)
                if not np.isfinite(total):
                    raise TrainingError(epoch)
                epoch_loss += total
                grad /= len(idx)
                if cfg.weight_decay:
                    grad += cfg.weight_decay * decay_mask * w
                opt.step(w, grad)
            if not np.all(np.isfinite(w)):
                raise TrainingError(epoch, "non-finite weights")
            logger.debug("epoch %d loss %.6g", epoch, epoch_loss / n)
            if epoch % cfg.tau == 0 and len(epochs) < T:
                if writer is not None:
                    writer.append(epoch, w)
                else:
                    snaps.append(w.copy())
                epochs.append(epoch)
    except BaseException:
        if writer is not None:
            writer.abort()
        raise
    if writer is not None:
        writer.close()
        store = load_store(path, mmap=True)
        store.config = cfg
        return store
    return CheckpointStore(spec, loss, cfg.tau, cfg.t_max, np.array(epochs), np.array(snaps), cfg)


def network_for(loss, n_features, hidden=(64, 64), seed=0, n_outputs=None):
    """Convenience: a spec whose output width matches ``loss``.

    ``n_outputs`` overrides the width for SquaredError, e.g. for reconstruction.
    """
    if n_outputs is not None:
        n_out = n_outputs
    elif isinstance(loss, CrossEntropy):
        n_out = loss.n_classes
    elif isinstance(loss, PinballPair):
        n_out = 2
    else:
        n_out = 1
    return NetworkSpec((n_features, *hidden, n_out), seed=seed)


__all__ = [
    "Checkpoint", "CheckpointStore", "NetworkSpec", "TrainConfig", "TrainingError",
    "eval_loss", "forward", "init_weights", "loss_and_grad", "network_for",
    "train_with_snapshots",
]
