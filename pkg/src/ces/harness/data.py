"""Datasets, CSV ingestion, split plans and preprocessing fitted on training rows only."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    target_name: str = "y"
    standardize: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if len(self.X) != len(self.y):
            raise ValueError("features and targets differ in length")
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(self.X.shape[1]))

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.feature_names, self.target_name, self.standardize, self.meta)


def load_csv(path, target_column, standardize=True):
    """Read a headered numeric CSV; ``target_column`` becomes ``y``.

    Standardization is only recorded here. It is fitted later on whatever
    rows a split designates as training data.
    """
    frame = pd.read_csv(path)
    if target_column not in frame.columns:
        raise ValueError(f"target column {target_column!r} not in {list(frame.columns)}")
    for col in frame.columns:
        if not pd.api.types.is_numeric_dtype(frame[col]):
            raise ValueError(f"column {col!r} holds non-numeric values")
    if frame.isna().any().any():
        bad = [c for c in frame.columns if frame[c].isna().any()]
        raise ValueError(f"missing values in columns {bad}")
    features = [c for c in frame.columns if c != target_column]
    return Dataset(frame[features].to_numpy(np.float64), frame[target_column].to_numpy(np.float64),
                   tuple(features), target_column, standardize, {"source": str(path)})


def fit_scaler(X_train):
    """Zero-mean, unit-variance scaler; constant columns get scale 1."""
    return StandardScaler().fit(X_train)


class ResponseScaler:
    """Divides responses by the mean absolute value of the training responses."""

    def fit(self, y_train):
        s = float(np.mean(np.abs(y_train))) if len(y_train) else 1.0
        self.scale_ = s if s > 0 and math.isfinite(s) else 1.0
        return self

    def transform(self, y):
        return np.asarray(y, dtype=np.float64) / self.scale_

    def inverse_transform(self, y):
        return np.asarray(y, dtype=np.float64) * self.scale_


CES = "ces"
THREE_WAY = "three_way"
_FRACTIONS = {CES: (("train", 0.75), ("escal", 0.25)),
              THREE_WAY: (("train", 0.50), ("es", 0.25), ("cal", 0.25))}


@dataclass(frozen=True)
class SplitPlan:
    mode: str = CES
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _FRACTIONS:
            raise ValueError(f"unknown split mode {self.mode!r}")

    @property
    def fractions(self):
        return dict(_FRACTIONS[self.mode])

    def split(self, n):
        """Disjoint sorted index arrays per role covering ``range(n)``.

        Every role but the first gets ``floor(fraction * n)`` rows; the
        first (training) role takes the remainder.
        """
        roles = _FRACTIONS[self.mode]
        sizes = [int(math.floor(f * n)) for _, f in roles[1:]]
        sizes.insert(0, n - sum(sizes))
        if min(sizes) < 1:
            raise ValueError(f"{n} samples are too few for a {self.mode} split")
        perm = np.random.default_rng(self.seed).permutation(n)
        out, start = {}, 0
        for (role, _), size in zip(roles, sizes):
            out[role] = np.sort(perm[start:start + size])
            start += size
        return out
