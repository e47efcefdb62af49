"""Desk-scale acceptance criteria, one or more tests per criterion.

Each test records a one-line summary through ``record_property("detail", ...)``;
``conftest.py`` prints a PASS/FAIL line per criterion at the end of the run.
"""

import functools
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ces.bounds import BoundInputs, dkw_bound, hybrid_bound, markov_asymptotic, markov_bound
from ces.envelope import PARABOLA, PINBALL, envelope_from_arrays
from ces.harness import pipeline as pl
from ces.harness.cli import cli
from ces.harness.synth import synth_classification, synth_outliers, synth_regression
from ces.losses import CrossEntropy, Pinball, PinballPair, SquaredError
from ces.methods import (LABEL_CONDITIONAL, MARGINAL, EsCalSet, ces_classification_sets, ces_cqr_intervals,
                         ces_cqr_intervals_nonempty, ces_outlier_pvalues, ces_regression_interval,
                         ces_regression_intervals, ces_regression_intervals_nonempty, outlier_escal)
from ces.network import NetworkSpec, TrainConfig, network_for, train_with_snapshots

from helpers import constant_store, finite_difference_check, gradient_cases

GOLDEN = Path(__file__).parent / "golden"
TRIALS = 200
EPOCHS = TrainConfig(t_max=20, tau=1)  # T = 20 checkpoints


def _train(X, y, loss, hidden, seed, n_outputs=None):
    spec = network_for(loss, X.shape[1], hidden, seed=seed, n_outputs=n_outputs)
    cfg = TrainConfig(t_max=EPOCHS.t_max, tau=EPOCHS.tau, seed=seed)
    store = train_with_snapshots(X, y, spec, loss, cfg)
    assert store.T == 20
    return store


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _split(n, sizes, seed):
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return np.split(perm[:sum(sizes)], cuts)


# ----------------------------------------------------------------------------
# 1. outlier detection validity


def _outlier_rejections(model, seed, alphas):
    n_train, n_escal, n_test = 200, 100, 50
    if model == "autoencoder":
        data = synth_outliers(n_train + n_escal + n_test, 0, seed)
        tr, es, te = _split(len(data), [n_train, n_escal, n_test], seed)
        store = _train(data.X[tr], data.X[tr], SquaredError(), (64, 64), seed, n_outputs=2)
    else:
        # labelled non-inliers join the training set only
        data = synth_outliers(n_train + n_escal + n_test, 100, seed)
        inl = np.flatnonzero(data.y == 0)
        tr, es, te = (inl[idx] for idx in _split(len(inl), [n_train, n_escal, n_test], seed))
        tr = np.concatenate([tr, np.flatnonzero(data.y == 1)])
        store = _train(data.X[tr], data.y[tr], CrossEntropy(2), (64, 64), seed)
    escal = outlier_escal(store, data.X[es])
    p = ces_outlier_pvalues(store, escal, data.X[te])
    return [float(np.mean(p <= a)) for a in alphas]


@pytest.mark.acceptance(1)
@pytest.mark.parametrize("model", ["autoencoder", "classifier"])
def test_outlier_pvalues_are_valid(model, record_property):
    alphas = (0.05, 0.1, 0.2)
    start = time.perf_counter()
    rates = np.array([_outlier_rejections(model, s, alphas) for s in range(TRIALS)])
    elapsed = time.perf_counter() - start
    parts, ok = [], True
    for k, a in enumerate(alphas):
        m, se = _mean_se(rates[:, k])
        ok &= m <= a + 3 * se
        parts.append(f"a={a}: {m:.4f} (bound {a + 3 * se:.4f})")
    record_property("detail", f"{model}, P(p<=a) " + "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok
    assert elapsed <= 300


# ----------------------------------------------------------------------------
# 2. classification coverage


def _class_coverage(seed, mode):
    data = synth_classification(500, 3, seed, radius=1.5)
    tr, es, te = _split(len(data), [300, 100, 100], seed)
    store = _train(data.X[tr], data.y[tr], CrossEntropy(3), (64, 64), seed)
    escal = EsCalSet(store, data.X[es], data.y[es], seed=seed)
    sets = ces_classification_sets(store, escal, data.X[te], 0.1, mode=mode, seed=seed)
    hit = np.array([y in s for s, y in zip(sets, data.y[te])])
    per_class = [float(hit[data.y[te] == k].mean()) if np.any(data.y[te] == k) else math.nan for k in range(3)]
    return float(hit.mean()), per_class


@pytest.mark.acceptance(2)
def test_label_conditional_coverage(record_property):
    per_class = np.array([_class_coverage(s, LABEL_CONDITIONAL)[1] for s in range(TRIALS)])
    parts, ok = [], True
    for k in range(3):
        col = per_class[:, k][~np.isnan(per_class[:, k])]
        m, se = _mean_se(col)
        ok &= m >= 0.9 - 3 * se
        parts.append(f"class {k}: {m:.4f} (floor {0.9 - 3 * se:.4f})")
    record_property("detail", "; ".join(parts))
    assert ok


@pytest.mark.acceptance(2)
def test_marginal_mode_coverage(record_property):
    m, se = _mean_se([_class_coverage(s, MARGINAL)[0] for s in range(TRIALS)])
    record_property("detail", f"marginal {m:.4f} (floor {0.9 - 3 * se:.4f})")
    assert m >= 0.9 - 3 * se


# ----------------------------------------------------------------------------
# 3. regression and quantile-regression coverage


def _regression_trial(seed):
    data = synth_regression(500, seed)
    tr, es, te = _split(len(data), [300, 100, 100], seed)
    X_te, y_te = data.X[te], data.y[te]
    out = {}

    store = _train(data.X[tr], data.y[tr], SquaredError(), (64, 64), seed)
    escal = EsCalSet(store, data.X[es], data.y[es])
    out["regression"] = (ces_regression_intervals(store, escal, X_te, 0.1),
                         ces_regression_intervals_nonempty(store, escal, X_te, 0.1))

    store = _train(data.X[tr], data.y[tr], PinballPair(0.05, 0.95), (64, 64, 64), seed)
    escal = EsCalSet(store, data.X[es], data.y[es])
    out["cqr"] = (ces_cqr_intervals(store, escal, X_te, 0.1), ces_cqr_intervals_nonempty(store, escal, X_te, 0.1))

    result = {}
    for name, (plain, nonempty) in out.items():
        result[name] = (float(np.mean([iv.contains(y) for iv, y in zip(plain, y_te)])),
                        sum(not b.covers(a) for a, b in zip(plain, nonempty)),
                        sum(a.empty for a in plain))
    return result


@pytest.fixture(scope="module")
def regression_trials():
    return [_regression_trial(s) for s in range(TRIALS)]


@pytest.mark.acceptance(3)
@pytest.mark.parametrize("name", ["regression", "cqr"])
def test_regression_coverage_and_superset(name, regression_trials, record_property):
    cov, violations, empties = zip(*(t[name] for t in regression_trials))
    m, se = _mean_se(cov)
    record_property("detail", f"{name}: coverage {m:.4f} (floor {0.9 - 3 * se:.4f}), "
                              f"superset violations {sum(violations)}, empty plain intervals {sum(empties)}")
    assert m >= 0.9 - 3 * se
    assert sum(violations) == 0


# ----------------------------------------------------------------------------
# 4. lower envelope against brute force


def _envelope_violations(kind, rng, grid):
    T = int(rng.integers(2, 257))
    c = rng.uniform(0, 10, T)
    loc = rng.uniform(-5, 5, T)
    beta = rng.uniform(0.02, 0.98) if kind == PINBALL else None
    d = grid[None, :] - loc[:, None]
    vals = c[:, None] + (d ** 2 if kind == PARABOLA else np.where(d > 0, beta * d, (beta - 1) * d))
    best = np.argmin(vals, axis=0)
    top2 = np.partition(vals, 1, axis=0)[:2]
    clear = top2[1] - top2[0] > 1e-9
    env = envelope_from_arrays(kind, c, loc, beta)
    return int(np.count_nonzero(env.segment_at(grid)[clear] != best[clear])), T


@pytest.mark.acceptance(4)
def test_envelope_matches_brute_force(record_property):
    grid = np.linspace(-10, 10, 10_001)
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bad, max_T = {PARABOLA: 0, PINBALL: 0}, 0
    for kind in (PARABOLA, PINBALL):
        for _ in range(1000):
            v, T = _envelope_violations(kind, rng, grid)
            bad[kind] += v
            max_T = max(max_T, T)
    elapsed = time.perf_counter() - start
    record_property("detail", f"violations parabola={bad[PARABOLA]} pinball={bad[PINBALL]}, "
                              f"largest T {max_T}, {elapsed:.0f}s")
    assert bad[PARABOLA] == 0 and bad[PINBALL] == 0
    assert elapsed <= 120


# ----------------------------------------------------------------------------
# 5. two constant models, hand-derived


def _two_model_interval():
    store = constant_store([0.0, 1.0])
    escal = EsCalSet(store, np.zeros((3, 1)), np.array([0.0, 0.2, 1.0]))
    return ces_regression_interval(store, escal, np.zeros(1), 0.25)


@pytest.mark.acceptance(5)
def test_two_model_interval(record_property):
    iv = _two_model_interval()
    record_property("detail", f"interval [{iv.lo:.12g}, {iv.hi:.12g}]")
    assert iv.lo == pytest.approx(-1.0, abs=1e-12) and iv.hi == pytest.approx(2.0, abs=1e-12)


@pytest.mark.acceptance(5)
@pytest.mark.xfail(strict=True, reason="1.04 + y^2 = 1.64 + (y - 1)^2 crosses at y = 0.8, not 1.3")
def test_two_model_knot(record_property):
    knot = _two_model_interval().pieces[0][0][1]
    record_property("detail", f"knot {knot:.12g}, expected 1.3")
    assert knot == pytest.approx(1.3, abs=1e-12)


# ----------------------------------------------------------------------------
# 6. coverage bounds


@pytest.mark.acceptance(6)
def test_bounds(record_property):
    dkw = dkw_bound(BoundInputs(100, 8000, 0.1, c_T=1 / 3)).value
    worst_gap, dominance = 0.0, True
    for T, n, a in itertools.product((10**2, 10**3, 10**4), (4000, 10**4, 10**5), (0.05, 0.1, 0.2)):
        x = BoundInputs(T, n, a, b=100.0)
        m, asym = markov_bound(x).value, markov_asymptotic(x).value
        worst_gap = max(worst_gap, abs(m - asym))
        dominance &= hybrid_bound(x).value >= max(m, dkw_bound(x).value)
    record_property("detail", f"dkw {dkw:.6f}, max |markov - asymptotic| {worst_gap:.5f}, hybrid dominates {dominance}")
    assert abs(dkw - 0.8782) <= 5e-4
    assert worst_gap <= 0.02
    assert dominance


# ----------------------------------------------------------------------------
# 7. desk-scale direction of the benchmark comparisons


@pytest.mark.acceptance(7)
def test_benchmark_directions(record_property):
    config = pl.PipelineConfig(t_max=40, tau=2, n_test=100, wsc_directions=100)
    methods = ["ces", "naive", "naive_corrected", "data_splitting"]
    rows = pl.run_pipeline(functools.partial(synth_regression, 1000), methods, pl.REGRESSION, 0.1,
                           trials=50, config=config)
    by = {m: [r for r in rows if r.method == m] for m in methods}
    cov = {m: _mean_se([r.marginal_coverage for r in by[m]]) for m in methods}
    width = {m: float(np.mean([r.mean_size for r in by[m]])) for m in methods}
    diff = [a.mean_size - b.mean_size for a, b in zip(by["ces"], by["data_splitting"])]
    d_mean, d_se = _mean_se(diff)
    record_property("detail", ", ".join(f"{m} cov {cov[m][0]:.3f} width {width[m]:.3f}" for m in methods)
                    + f"; ces - data_splitting width {d_mean:.3f} (slack {2 * d_se:.3f})")
    assert cov["naive_corrected"][0] > cov["ces"][0]
    assert d_mean <= 2 * d_se


# ----------------------------------------------------------------------------
# 8. gradients and determinism


@pytest.mark.acceptance(8)
def test_gradients_all_losses(record_property):
    errs = {f"{type(c[1]).__name__}/{c[0].n_outputs}": finite_difference_check(*c) for c in gradient_cases()}
    record_property("detail", "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    assert max(errs.values()) <= 1e-4


@pytest.mark.acceptance(8)
def test_checkpoints_bitwise_stable(tmp_path, record_property):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 3))
    cases = [(SquaredError(), 1, rng.normal(size=40)), (CrossEntropy(3), 3, rng.integers(0, 3, 40)),
             (Pinball(0.7), 1, rng.normal(size=40)), (PinballPair(0.05, 0.95), 2, rng.normal(size=40))]
    same = []
    for k, (loss, n_out, y) in enumerate(cases):
        spec = NetworkSpec((3, 8, 8, n_out), seed=k)
        cfg = TrainConfig(t_max=8, tau=2, batch_size=7, seed=k)
        a, b = tmp_path / f"{k}a.ckpt", tmp_path / f"{k}b.ckpt"
        train_with_snapshots(X, y, spec, loss, cfg, path=a)
        train_with_snapshots(X, y, spec, loss, cfg, path=b)
        same.append(a.read_bytes() == b.read_bytes())
    record_property("detail", f"identical checkpoint files for {sum(same)}/{len(same)} loss kinds")
    assert all(same)


# ----------------------------------------------------------------------------
# 9. CLI golden files


@pytest.mark.acceptance(9)
def test_bounds_golden(tmp_path, record_property):
    out = tmp_path / "bounds.csv"
    assert cli(["bounds", "--T", "100", "1000", "10000", "--n", "1000", "8000", "100000",
                "--alpha", "0.1", "--out", str(out)]) == 0
    same = out.read_bytes() == (GOLDEN / "bounds.csv").read_bytes()
    record_property("detail", f"bounds.csv byte-identical: {same}")
    assert same


@pytest.mark.acceptance(9)
def test_bench_golden(tmp_path, record_property):
    out = tmp_path / "bench.csv"
    assert cli(["bench", "--trials", "2", "--seed", "7", "--n", "400", "--config", str(GOLDEN / "bench.cfg"),
                "--out", str(out)]) == 0
    same = out.read_bytes() == (GOLDEN / "bench.csv").read_bytes()
    record_property("detail", f"bench.csv byte-identical: {same}")
    assert same
