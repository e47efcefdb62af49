"""Conformalized early stopping: calibrated predictions from checkpoints selected per test point."""

from .bounds import BoundInputs, BoundResult, corrected_level, dkw_bound, hybrid_bound, markov_asymptotic, markov_bound
from .conformal import ScoreSet, add_tiebreak_noise, aps_score, conformal_pvalue, conformal_quantile
from .envelope import (ShiftedParabola, ShiftedPinball, StepFunction, concat_and_sort_knots,
                       parabola_lower_envelope, pinball_lower_envelope)
from .estimators import CESClassifier, CESOutlierDetector, CESQuantileRegressor, CESRegressor
from .losses import CrossEntropy, Pinball, PinballPair, SquaredError
from .methods import (EsCalSet, Interval, LabelSet, ces_classification_set, ces_cqr_interval,
                      ces_cqr_interval_nonempty, ces_outlier_pvalue, ces_regression_interval,
                      ces_regression_interval_nonempty)
from .naive import (naive_classification_set, naive_cqr_interval, naive_outlier_pvalue,
                    naive_regression_interval, select_naive)
from .network import (Checkpoint, CheckpointStore, NetworkSpec, TrainConfig, eval_loss, forward,
                      train_with_snapshots)
from .special import betainc, betaincinv, normal_quantile
from .storage import load_store, save_store

__version__ = "0.1.0"
