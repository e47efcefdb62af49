"""Command-line entry point ``ces``.

Exit status: 0 on success, 2 on usage errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from functools import partial

import numpy as np

from .. import methods as ces
from .. import naive
from ..bounds import BoundInputs, all_bounds, corrected_level
from ..losses import CrossEntropy, SquaredError
from ..envelope import (PARABOLA, PINBALL, ShiftedParabola, ShiftedPinball, family_values,
                        parabola_lower_envelope, pinball_lower_envelope)
from ..storage import load_store
from . import pipeline
from .data import CES, SplitPlan, fit_scaler, load_csv
from .synth import HETEROSCEDASTIC, HOMOSCEDASTIC, synth_classification, synth_outliers, synth_regression


DEFAULT_ALPHA = 0.1


class UsageError(Exception):
    pass


def read_config(path):
    """Flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _pipeline_config(args):
    values = read_config(args.config) if args.config else {}
    try:
        return pipeline.PipelineConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _emit(text, out):
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dataset_source(args):
    """Either a fixed CSV dataset or a seed -> Dataset factory for synthetic data."""
    if args.data:
        if not args.target:
            raise UsageError("--data needs --target")
        return load_csv(args.data, args.target)
    if args.task in (pipeline.REGRESSION, pipeline.CQR):
        return partial(synth_regression, args.n, kind=args.noise)
    if args.task == pipeline.CLASSIFICATION:
        return partial(synth_classification, args.n, args.classes)
    return partial(synth_outliers, args.n, args.n_outliers)


# ----------------------------------------------------------------------------
# subcommands


def cmd_bounds(args):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["T", "n", "alpha", "b", "c_T", "dkw", "markov", "markov_asymptotic", "hybrid",
                     "corrected_level"])
    for T in args.T:
        for n in args.n:
            inputs = BoundInputs(T, n, args.alpha, args.b, args.c)
            res = all_bounds(inputs)
            level = corrected_level(args.alpha, inputs)
            writer.writerow([T, n, "%g" % args.alpha, "%g" % args.b, "%.6f" % args.c]
                            + ["%.6f" % res[k].value for k in ("dkw", "markov", "markov_asymptotic", "hybrid")]
                            + ["%.6f" % level])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_bench(args):
    config = _pipeline_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in pipeline.METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(pipeline.METHODS)}")
    data = _dataset_source(args)
    rows = pipeline.run_pipeline(data, methods, args.task, args.alpha, args.trials, config=config,
                                 base_seed=args.seed)
    _emit(pipeline.format_rows(rows, args.task), args.out)
    if args.out:
        meta = {"task": args.task, "alpha": args.alpha, "trials": args.trials, "seed": args.seed,
                "config": {k: getattr(config, k) for k in config.__dataclass_fields__}}
        with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=list)
    return 0


def _training_view(args, config):
    """Dataset, role indices, fitted scaler and loss for train/predict."""
    source = _dataset_source(args)
    data = source(args.seed) if callable(source) else source
    roles = SplitPlan(CES, args.seed).split(len(data))
    scaler = fit_scaler(data.X[roles["train"]]) if data.standardize else None
    has_out = args.task == pipeline.OUTLIER and np.any(data.y[roles["train"]] == 1)
    loss = pipeline.task_loss(args.task, data.y, args.alpha, config, has_out)
    return data, roles, scaler, loss


def _rows_for(task, data, idx, loss, training):
    """Rows (and targets) used for one role; outlier hold-out sets keep inliers only."""
    if task != pipeline.OUTLIER:
        return idx, data.y[idx]
    keep = idx if training and isinstance(loss, CrossEntropy) else idx[data.y[idx] == 0]
    return keep, None


def cmd_train(args):
    from ..network import network_for, train_with_snapshots

    config = _pipeline_config(args)
    data, roles, scaler, loss = _training_view(args, config)
    fx = (lambda X: scaler.transform(X)) if scaler is not None else (lambda X: X)
    idx, y = _rows_for(args.task, data, roles["train"], loss, True)
    X = fx(data.X[idx])
    if args.task == pipeline.OUTLIER:
        y = data.y[idx] if isinstance(loss, CrossEntropy) else X
    n_out = data.X.shape[1] if args.task == pipeline.OUTLIER and isinstance(loss, SquaredError) else None
    spec = network_for(loss, data.X.shape[1], config.hidden_for(args.task), seed=args.seed, n_outputs=n_out)
    store = train_with_snapshots(X, y, spec, loss, config.train_config(args.seed), path=args.store)
    sidecar = {
        "task": args.task, "alpha": args.alpha, "seed": args.seed,
        "data": args.data, "target": args.target, "n": args.n, "noise": args.noise,
        "classes": args.classes, "n_outliers": args.n_outliers, "config_file": args.config,
        "checkpoints": store.T, "epochs": [int(e) for e in store.epochs],
    }
    with open(args.store + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    print(f"wrote {store.T} checkpoints to {args.store}", file=sys.stderr)
    return 0


def cmd_predict(args):
    with open(args.store + ".json", encoding="utf-8") as fh:
        side = json.load(fh)
    for key in ("task", "seed", "data", "target", "n", "noise", "classes", "n_outliers"):
        setattr(args, key, side[key])
    if args.alpha is None:
        args.alpha = side["alpha"] if side["alpha"] is not None else DEFAULT_ALPHA
    if side.get("config_file") and not args.config:
        args.config = side["config_file"]
    config = _pipeline_config(args)
    data, roles, scaler, loss = _training_view(args, config)
    store = load_store(args.store, mmap=True)
    fx = (lambda X: scaler.transform(X)) if scaler is not None else (lambda X: X)
    idx, y = _rows_for(args.task, data, roles["escal"], loss, False)
    X_cal = fx(data.X[idx])
    if args.task == pipeline.OUTLIER:
        escal = ces.outlier_escal(store, X_cal)
    else:
        escal = ces.EsCalSet(store, X_cal, y, seed=args.seed)

    target = args.target or data.target_name
    test = load_csv(args.input, target) if _has_column(args.input, target) else _features_only(args.input)
    X_test = fx(test.X)
    use_naive = args.method == "naive"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    task = args.task
    if task in (pipeline.REGRESSION, pipeline.CQR):
        if use_naive:
            fn = naive.naive_regression_intervals if task == pipeline.REGRESSION else naive.naive_cqr_intervals
        elif task == pipeline.REGRESSION:
            fn = ces.ces_regression_intervals_nonempty if config.nonempty else ces.ces_regression_intervals
        else:
            fn = ces.ces_cqr_intervals_nonempty if config.nonempty else ces.ces_cqr_intervals
        writer.writerow(["row", "lo", "hi", "empty", "fallback_used"])
        for j, iv in enumerate(fn(store, escal, X_test, args.alpha)):
            writer.writerow([j, "%.6f" % iv.lo, "%.6f" % iv.hi, int(iv.empty), int(iv.fallback_used)])
    elif task == pipeline.CLASSIFICATION:
        fn = naive.naive_classification_sets if use_naive else ces.ces_classification_sets
        writer.writerow(["row", "labels"] + [f"p{k}" for k in range(loss.n_classes)])
        for j, s in enumerate(fn(store, escal, X_test, args.alpha, config.mode, seed=args.seed)):
            writer.writerow([j, ";".join(str(k) for k in s.labels)] + ["%.6f" % p for p in s.pvalues])
    else:
        fn = naive.naive_outlier_pvalues if use_naive else ces.ces_outlier_pvalues
        writer.writerow(["row", "pvalue", "outlier"])
        for j, p in enumerate(fn(store, escal, X_test)):
            writer.writerow([j, "%.6f" % p, int(p <= args.alpha)])
    _emit(buf.getvalue(), args.out)
    return 0


def _has_column(path, name):
    with open(path, encoding="utf-8") as fh:
        return name in next(csv.reader(fh))


def _features_only(path):
    import pandas as pd

    from .data import Dataset

    frame = pd.read_csv(path)
    return Dataset(frame.to_numpy(np.float64), np.zeros(len(frame)))


def cmd_envelope_check(args):
    rng = np.random.default_rng(args.seed)
    grid = np.linspace(-args.span, args.span, args.grid)
    kinds = (PARABOLA, PINBALL) if args.kind == "both" else (args.kind,)
    checked = violations = 0
    for kind in kinds:
        for _ in range(args.families):
            T = int(rng.integers(1, args.max_T + 1))
            c = rng.uniform(0.0, 3.0, T)
            loc = rng.uniform(-2.0, 2.0, T)
            if kind == PARABOLA:
                family = [ShiftedParabola(t, c[t], loc[t]) for t in range(T)]
                env = parabola_lower_envelope(family)
            else:
                beta = float(rng.uniform(0.05, 0.95))
                family = [ShiftedPinball(t, c[t], loc[t], beta) for t in range(T)]
                env = pinball_lower_envelope(family)
            vals = family_values(family, grid)
            got = env.segment_at(grid)
            best = vals.min(axis=0)
            srt = np.sort(vals, axis=0)
            clear = (srt[1] - srt[0] > 1e-9) if T > 1 else np.ones(len(grid), bool)
            bad = clear & (vals[got, np.arange(len(grid))] > best)
            checked += int(clear.sum())
            violations += int(bad.sum())
    print(f"kinds={','.join(kinds)} families={args.families} grid_points_checked={checked} violations={violations}")
    return 1 if violations else 0


# ----------------------------------------------------------------------------
# argument parsing


def _alpha(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {value}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--alpha", type=_alpha, default=None, help="significance level (default 0.1)")
    common.add_argument("--out", help="write CSV output here instead of stdout")
    common.add_argument("--config", help="flat key=value file of pipeline settings")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--task", choices=pipeline.TASKS, default=pipeline.REGRESSION)
    data.add_argument("--data", help="headered numeric CSV; synthetic data when omitted")
    data.add_argument("--target", help="target column of --data")
    data.add_argument("--n", type=_positive_int, default=1000, help="synthetic sample (or inlier) count")
    data.add_argument("--noise", choices=(HETEROSCEDASTIC, HOMOSCEDASTIC), default=HETEROSCEDASTIC)
    data.add_argument("--classes", type=_positive_int, default=3)
    data.add_argument("--n-outliers", type=int, default=200)

    parser = argparse.ArgumentParser(prog="ces", description="Conformalized early stopping tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data], help="train and store checkpoints")
    p.add_argument("--store", required=True, help="checkpoint file to write (a .json sidecar goes beside it)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="calibrated predictions from a stored run")
    p.add_argument("--store", required=True)
    p.add_argument("--input", required=True, help="CSV of test features")
    p.add_argument("--method", choices=("ces", "naive"), default="ces")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", parents=[common, data], help="repeated-trial method comparison")
    p.add_argument("--trials", type=_positive_int, default=10)
    p.add_argument("--methods", default=",".join(pipeline.METHODS))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bounds", parents=[common], help="coverage bounds for naive early stopping")
    p.add_argument("--T", type=_positive_int, nargs="+", required=True)
    p.add_argument("--n", type=_positive_int, nargs="+", required=True)
    p.add_argument("--b", type=float, default=100.0)
    p.add_argument("--c", type=float, default=1.0 / 3.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("envelope-check", parents=[common], help="compare envelopes with brute force")
    p.add_argument("--kind", choices=(PARABOLA, PINBALL, "both"), default="both")
    p.add_argument("--families", type=_positive_int, default=100)
    p.add_argument("--max-T", type=_positive_int, default=256)
    p.add_argument("--grid", type=_positive_int, default=10001)
    p.add_argument("--span", type=float, default=5.0)
    p.set_defaults(func=cmd_envelope_check)
    return parser


def cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.alpha is None and args.func is not cmd_predict:
        args.alpha = DEFAULT_ALPHA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "b", 2.0) <= 1.0:
        print("ces: error: --b must exceed 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ces: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ces: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"ces: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
