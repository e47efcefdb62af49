"""Repeated-split comparison of CES against its baselines.

Each trial draws a held-out test set, splits the rest, trains one network
per split layout, and scores every requested method on the same test set.
Methods sharing a split layout share the trained checkpoints.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import methods as ces
from .. import naive
from ..losses import CrossEntropy, PinballPair, SquaredError
from ..network import CheckpointStore, TrainConfig, network_for, train_with_snapshots
from .data import CES, THREE_WAY, ResponseScaler, SplitPlan, fit_scaler
from .wsc import MIN_POINTS, wsc_coverage

logger = logging.getLogger(__name__)

REGRESSION = "regression"
CQR = "cqr"
CLASSIFICATION = "classification"
OUTLIER = "outlier"
TASKS = (REGRESSION, CQR, CLASSIFICATION, OUTLIER)

METHODS = ("ces", "naive", "naive_corrected", "data_splitting", "full_training")

COLUMNS = ("method", "sample_size", "marginal_coverage", "conditional_coverage", "{size}", "tpr", "fpr",
           "trial_seed")


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale defaults; every field can be set from a key=value config file."""

    hidden: tuple = ()  # empty picks (64, 64), or (64, 64, 64) for quantile regression
    t_max: int = 200
    tau: int = 2
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 25
    weight_decay: float = 0.0
    n_test: int = 100
    n_test_inliers: int = 50
    n_test_outliers: int = 50
    sample_size: int = 0  # 0 uses every row not held out for testing
    mode: str = ces.LABEL_CONDITIONAL
    nonempty: bool = False
    outlier_model: str = "classifier"
    rescale_response: bool = False
    bound_b: float = 100.0
    bound_c: float = 1.0 / 3.0
    wsc_delta: float = 0.1
    wsc_directions: int = 1000
    wsc_split: float = 0.25

    @classmethod
    def from_mapping(cls, values):
        """Build from string values, coercing each to its field's type."""
        kwargs = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            kind = type(names[key].default)
            if not isinstance(raw, str):
                kwargs[key] = raw
            elif kind is bool:
                if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(f"{key} expects a boolean, got {raw!r}")
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            elif kind is tuple:
                kwargs[key] = tuple(int(v) for v in raw.split(",") if v.strip())
            else:
                kwargs[key] = kind(raw)
        return cls(**kwargs)

    def hidden_for(self, task):
        if self.hidden:
            return tuple(self.hidden)
        return (64, 64, 64) if task == CQR else (64, 64)

    def train_config(self, seed):
        return TrainConfig(t_max=self.t_max, tau=self.tau, optimizer=self.optimizer, lr=self.lr,
                           batch_size=self.batch_size, weight_decay=self.weight_decay, seed=seed)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    sample_size: int
    marginal_coverage: float
    conditional_coverage: float
    mean_size: float  # interval width or set cardinality
    tpr: float
    fpr: float
    trial_seed: int


def size_column(task):
    return "mean_cardinality" if task == CLASSIFICATION else "mean_width"


def format_rows(rows, task):
    """CSV text with a fixed column order and ``%.6f`` floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c.format(size=size_column(task)) for c in COLUMNS])
    for r in rows:
        writer.writerow([r.method, r.sample_size] + ["%.6f" % v for v in (
            r.marginal_coverage, r.conditional_coverage, r.mean_size, r.tpr, r.fpr)] + [r.trial_seed])
    return buf.getvalue()


def write_rows(rows, task, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_rows(rows, task))


# ----------------------------------------------------------------------------
# one trial


def task_loss(task, y, alpha, config, has_outliers):
    if task == REGRESSION:
        return SquaredError()
    if task == CQR:
        return PinballPair(alpha / 2.0, 1.0 - alpha / 2.0)
    if task == CLASSIFICATION:
        return CrossEntropy(int(np.max(y)) + 1)
    if config.outlier_model == "classifier" and has_outliers:
        return CrossEntropy(2)
    return SquaredError()


@dataclass
class _Fitted:
    """A trained store plus the preprocessed roles of one split layout."""

    store: CheckpointStore
    sets: dict  # role -> (X, y)
    X_test: np.ndarray
    y_test: np.ndarray
    y_scale: float


def _fit_layout(task, data, roles, test_idx, extra_train, loss, alpha, config, seed):
    X, y = data.X, data.y
    train_idx = roles["train"] if extra_train is None else np.sort(np.concatenate([roles["train"], extra_train]))
    scaler = fit_scaler(X[roles["train"]]) if data.standardize else None

    def fx(idx):
        return scaler.transform(X[idx]) if scaler is not None else X[idx]

    y_scale = 1.0
    yt = y.astype(np.float64) if task in (REGRESSION, CQR) else y
    if task in (REGRESSION, CQR) and config.rescale_response:
        y_scale = ResponseScaler().fit(y[roles["train"]]).scale_
        yt = y / y_scale

    X_train = fx(train_idx)
    if task == OUTLIER:
        y_train = y[train_idx] if isinstance(loss, CrossEntropy) else X_train
    else:
        y_train = yt[train_idx]
    spec = network_for(loss, X.shape[1], config.hidden_for(task), seed=seed,
                       n_outputs=X.shape[1] if task == OUTLIER and isinstance(loss, SquaredError) else None)
    store = train_with_snapshots(X_train, y_train, spec, loss, config.train_config(seed))
    sets = {}
    for role, idx in roles.items():
        if role == "train":
            continue
        if task == OUTLIER:
            sets[role] = (fx(idx), ces.outlier_targets(loss, fx(idx)))
        else:
            sets[role] = (fx(idx), yt[idx])
    y_test = yt[test_idx] if task != OUTLIER else y[test_idx]
    return _Fitted(store, sets, fx(test_idx), y_test, y_scale)


def _holdout(fitted, role, seed):
    X, y = fitted.sets[role]
    return ces.EsCalSet(fitted.store, X, y, seed=seed)


def _predict(task, method, fitted, alpha, config, seed):
    """Test-set output of one method: intervals, label sets, or (p-values, level)."""
    store = fitted.store
    X_test = fitted.X_test
    if method == "data_splitting":
        sel = _holdout(fitted, "es", seed)
        cal = _holdout(fitted, "cal", seed)
    else:
        sel = cal = _holdout(fitted, "escal", seed)

    if method == "ces":
        if task == REGRESSION:
            fn = ces.ces_regression_intervals_nonempty if config.nonempty else ces.ces_regression_intervals
            return fn(store, cal, X_test, alpha)
        if task == CQR:
            fn = ces.ces_cqr_intervals_nonempty if config.nonempty else ces.ces_cqr_intervals
            return fn(store, cal, X_test, alpha)
        if task == CLASSIFICATION:
            return ces.ces_classification_sets(store, cal, X_test, alpha, config.mode, seed=seed)
        return ces.ces_outlier_pvalues(store, cal, X_test), alpha

    level = alpha
    if method == "naive_corrected":
        if task == CLASSIFICATION and config.mode == ces.LABEL_CONDITIONAL:
            level = naive.class_corrected_levels(cal, store.loss.n_classes, alpha, config.bound_b, config.bound_c)
        else:
            level = naive.naive_corrected_level(cal, alpha, config.bound_b, config.bound_c)
        logger.info("corrected level %s for target %g", level, alpha)

    if method == "full_training":
        t = t_low = t_high = store.T - 1
    elif task == CQR:
        t_low, t_high = naive.select_naive_heads(sel)
    else:
        t = naive.select_naive(sel)

    if task == REGRESSION:
        return naive.fixed_regression_intervals(store, cal, X_test, level, t)
    if task == CQR:
        return naive.as_intervals(*naive.fixed_cqr_bounds(store, cal, X_test, level, t_low, t_high))
    if task == CLASSIFICATION:
        return naive.fixed_classification_sets(store, cal, X_test, level, t, config.mode, seed=seed)
    return naive.fixed_outlier_pvalues(store, cal, X_test, t), level


def _wsc(X_test, covered, config, seed):
    if len(X_test) < MIN_POINTS:
        return math.nan
    return wsc_coverage(X_test, covered, config.wsc_delta, config.wsc_directions, config.wsc_split, seed)


def _metrics(task, method, output, fitted, sample_size, config, seed):
    nan = math.nan
    if task == OUTLIER:
        pvals, level = output
        flagged = pvals <= level
        is_out = fitted.y_test == 1
        tpr = float(flagged[is_out].mean()) if is_out.any() else nan
        fpr = float(flagged[~is_out].mean()) if (~is_out).any() else nan
        return MetricsRow(method, sample_size, 1.0 - fpr, nan, nan, tpr, fpr, seed)
    if task == CLASSIFICATION:
        covered = np.array([y in s for y, s in zip(fitted.y_test, output)])
        size = float(np.mean([len(s) for s in output]))
    else:
        covered = np.array([iv.contains(y) for y, iv in zip(fitted.y_test, output)])
        size = float(np.mean([iv.width for iv in output])) * fitted.y_scale
    wsc = _wsc(fitted.X_test, covered, config, seed)
    return MetricsRow(method, sample_size, float(covered.mean()), wsc, size, nan, nan, seed)


def run_trial(dataset, task, methods, alpha, seed, config=None):
    """Rows for every method in ``methods`` on one resplit of ``dataset``.

    ``dataset`` may be a callable ``seed -> Dataset`` to draw fresh data per trial.
    """
    config = config or PipelineConfig()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    data = dataset(seed) if callable(dataset) else dataset
    rng = np.random.default_rng(seed)

    extra_train = None
    if task == OUTLIER:
        inl = rng.permutation(np.flatnonzero(data.y == 0))
        out = rng.permutation(np.flatnonzero(data.y == 1))
        if len(inl) <= config.n_test_inliers or len(out) < config.n_test_outliers:
            raise ValueError("not enough inliers/outliers for the requested test set")
        test_idx = np.concatenate([inl[:config.n_test_inliers], out[:config.n_test_outliers]])
        pool = inl[config.n_test_inliers:]
        extra_train = out[config.n_test_outliers:]
    else:
        perm = rng.permutation(len(data))
        if len(perm) <= config.n_test:
            raise ValueError(f"{len(perm)} rows leave nothing after a {config.n_test}-point test set")
        test_idx, pool = perm[:config.n_test], perm[config.n_test:]
    if config.sample_size:
        if config.sample_size > len(pool):
            raise ValueError(f"sample_size {config.sample_size} exceeds the {len(pool)} available rows")
        pool = pool[:config.sample_size]

    has_outliers = extra_train is not None and len(extra_train) > 0
    loss = task_loss(task, data.y, alpha, config, has_outliers)
    if not isinstance(loss, CrossEntropy):
        extra_train = None
    layouts = {}
    rows = []
    for method in methods:
        layout = THREE_WAY if method == "data_splitting" else CES
        if layout not in layouts:
            roles = {k: pool[v] for k, v in SplitPlan(layout, seed).split(len(pool)).items()}
            layouts[layout] = _fit_layout(task, data, roles, test_idx, extra_train, loss, alpha, config, seed)
        fitted = layouts[layout]
        output = _predict(task, method, fitted, alpha, config, seed)
        rows.append(_metrics(task, method, output, fitted, len(pool), config, seed))
    return rows


def _trial_job(args):
    return run_trial(*args)


def run_pipeline(dataset, method, task, alpha, trials, seeds=None, config=None, base_seed=0):
    """Rows for ``trials`` independent trials, ordered by trial then method.

    ``method`` is one method name or a list of them. Trial ``i`` uses
    ``seeds[i]`` if given, else ``base_seed + i``. Up to ``CES_THREADS``
    trials run in parallel processes.
    """
    methods = [method] if isinstance(method, str) else list(method)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    seeds = list(seeds) if seeds is not None else [base_seed + i for i in range(trials)]
    if len(seeds) != trials:
        raise ValueError("need one seed per trial")
    jobs = [(dataset, task, methods, alpha, s, config) for s in seeds]
    workers = max(1, min(int(os.environ.get("CES_THREADS", "1")), trials))
    if workers == 1:
        results = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    return [row for trial_rows in results for row in trial_rows]


def summarize(rows):
    """Mean and standard error of each metric per method."""
    out = {}
    for method in dict.fromkeys(r.method for r in rows):
        sub = [r for r in rows if r.method == method]
        stats = {}
        for name in ("marginal_coverage", "conditional_coverage", "mean_size", "tpr", "fpr"):
            vals = np.array([getattr(r, name) for r in sub], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            mean = float(vals.mean()) if len(vals) else math.nan
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
            stats[name] = (mean, se)
        out[method] = stats
    return out
