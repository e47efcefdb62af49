"""Data, synthetic generators, benchmark pipelines and the command line."""

from .data import Dataset, ResponseScaler, SplitPlan, fit_scaler, load_csv
from .pipeline import METHODS, TASKS, MetricsRow, PipelineConfig, format_rows, run_pipeline, run_trial
from .synth import synth_classification, synth_outliers, synth_regression
from .wsc import wsc_coverage
