"""Deterministic numeric hygiene: log transforms, IQR handling, normalization.

Quartiles use linear interpolation at fractional positions 0.25*(n-1) and
0.75*(n-1) on the sorted sample. Feature outliers are winsorized (clipped
into the IQR fence) while label outliers are dropped; normalization is a
z-score with the population standard deviation (divide by n), and constant
columns map to zero.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_float_matrix, as_float_vector, check_n_columns
from .errors import DataError

IQR_FENCE = 1.5


@dataclass(frozen=True)
class IqrBounds:
    """Quartiles and the derived outlier fence for one sample."""

    q1: float
    q3: float
    iqr: float
    lower: float
    upper: float

    def contains(self, value):
        return self.lower <= value <= self.upper


def log1p_transform(x):
    """Natural log of (1 + x) for non-negative x; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0):
        raise DataError("log1p_transform requires non-negative input")
    result = np.log1p(arr)
    return float(result) if np.isscalar(x) or arr.ndim == 0 else result


def iqr_bounds(values):
    """Fit an IqrBounds on a non-empty sample of finite values."""
    arr = as_float_vector(values, "values")
    if arr.size == 0:
        raise DataError("iqr_bounds requires at least one value")
    q1, q3 = np.percentile(arr, [25.0, 75.0], method="linear")
    iqr = q3 - q1
    return IqrBounds(
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        lower=float(q1 - IQR_FENCE * iqr),
        upper=float(q3 + IQR_FENCE * iqr),
    )


def filter_label_outliers(examples, bounds=None):
    """Partition examples into (kept, dropped, bounds) by the label IQR fence.

    Passing precomputed ``bounds`` refilters against a fixed fence, which is
    idempotent on an already-filtered set.
    """
    if bounds is None:
        if len(examples) < 4:
            raise DataError(
                f"label outlier filtering needs at least 4 examples, got {len(examples)}"
            )
        bounds = iqr_bounds([ex.label for ex in examples])
    kept = [ex for ex in examples if bounds.contains(ex.label)]
    dropped = [ex for ex in examples if not bounds.contains(ex.label)]
    return kept, dropped, bounds


class IqrWinsorizer(TransformerMixin, BaseEstimator):
    """Clip every continuous column into its training-fold IQR fence."""

    def fit(self, X, y=None):
        X = as_float_matrix(X)
        self.bounds_ = [iqr_bounds(X[:, j]) for j in range(X.shape[1])]
        self.lower_ = np.array([b.lower for b in self.bounds_])
        self.upper_ = np.array([b.upper for b in self.bounds_])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "bounds_"):
            raise NotFittedError("IqrWinsorizer is not fitted")
        X = as_float_matrix(X)
        check_n_columns(X, self.n_features_in_)
        return np.clip(X, self.lower_, self.upper_)


class PopulationScaler(TransformerMixin, BaseEstimator):
    """Z-score normalization with population std; constant columns map to 0."""

    def fit(self, X, y=None):
        X = as_float_matrix(X)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)  # ddof=0: population convention
        self.constant_ = self.scale_ == 0.0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "mean_"):
            raise NotFittedError("PopulationScaler is not fitted")
        X = as_float_matrix(X)
        check_n_columns(X, self.n_features_in_)
        safe = np.where(self.constant_, 1.0, self.scale_)
        out = (X - self.mean_) / safe
        out[:, self.constant_] = 0.0
        return out

    def inverse_transform(self, X):
        if not hasattr(self, "mean_"):
            raise NotFittedError("PopulationScaler is not fitted")
        X = as_float_matrix(X)
        check_n_columns(X, self.n_features_in_)
        safe = np.where(self.constant_, 0.0, self.scale_)
        return X * safe + self.mean_


@dataclass
class ColumnStats:
    """Serializable per-column preprocessing state fitted on one training fold.

    Continuous columns carry the imputation median, the winsorize fence, and
    the normalization moments; categorical columns carry their observed
    vocabulary. Constant columns (std == 0) are flagged.
    """

    continuous_names: list
    medians: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    categorical_vocab: dict

    @property
    def constant(self):
        return self.stds == 0.0

    def to_dict(self):
        columns = {}
        for j, name in enumerate(self.continuous_names):
            columns[name] = {
                "median": float(self.medians[j]),
                "lower": float(self.lower[j]),
                "upper": float(self.upper[j]),
                "mean": float(self.means[j]),
                "std": float(self.stds[j]),
                "constant": bool(self.stds[j] == 0.0),
            }
        return {
            "continuous": columns,
            "categorical": {
                name: {"vocabulary": sorted(vocab)}
                for name, vocab in self.categorical_vocab.items()
            },
        }

    @classmethod
    def from_dict(cls, payload):
        names = list(payload["continuous"])
        columns = payload["continuous"]
        return cls(
            continuous_names=names,
            medians=np.array([columns[n]["median"] for n in names]),
            lower=np.array([columns[n]["lower"] for n in names]),
            upper=np.array([columns[n]["upper"] for n in names]),
            means=np.array([columns[n]["mean"] for n in names]),
            stds=np.array([columns[n]["std"] for n in names]),
            categorical_vocab={
                name: set(entry["vocabulary"])
                for name, entry in payload["categorical"].items()
            },
        )

    def winsorize(self, X):
        X = as_float_matrix(X)
        check_n_columns(X, len(self.continuous_names))
        return np.clip(X, self.lower, self.upper)

    def normalize(self, X):
        X = as_float_matrix(X)
        check_n_columns(X, len(self.continuous_names))
        safe = np.where(self.constant, 1.0, self.stds)
        out = (X - self.means) / safe
        out[:, self.constant] = 0.0
        return out
