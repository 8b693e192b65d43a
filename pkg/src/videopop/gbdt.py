"""Gradient-boosted regression trees minimizing Huber loss.

First-order boosting: each tree fits the negative Huber gradient at the
current predictions and leaves predict the plain mean of those
pseudo-residuals. The model starts from the label median (a robust init
matching the loss) and handles categorical columns through ordered
target-statistic encoding, so the trees only ever see numeric values.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_float_vector, check_finite
from .errors import DataError, SchemaMismatchError
from .tree import RegressionTree, fit_tree, presort_columns

MODEL_FORMAT = "videopop-gbdt"
MODEL_VERSION = 1


def _check_loss_inputs(y, yhat, delta):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if delta <= 0:
        raise ValueError("huber delta must be positive")
    check_finite(y, "y")
    check_finite(yhat, "yhat")
    return y, yhat


def huber_loss(y, yhat, delta):
    """Quadratic inside |residual| <= delta, linear outside; continuous at delta."""
    y, yhat = _check_loss_inputs(y, yhat, delta)
    residual = y - yhat
    absres = np.abs(residual)
    quadratic = 0.5 * residual * residual
    linear = delta * absres - 0.5 * delta * delta
    out = np.where(absres <= delta, quadratic, linear)
    return float(out) if out.ndim == 0 else out


def huber_gradient(y, yhat, delta):
    """d loss / d yhat: -(y - yhat) clipped into [-delta, delta] in magnitude."""
    y, yhat = _check_loss_inputs(y, yhat, delta)
    out = -np.clip(y - yhat, -delta, delta)
    return float(out) if out.ndim == 0 else out


def huber_pseudo_residuals(y, yhat, delta):
    """Negative gradient: the regression target of each boosting tree."""
    y, yhat = _check_loss_inputs(y, yhat, delta)
    return np.clip(y - yhat, -delta, delta)


class OrderedTargetEncoder:
    """Ordered target statistics for categorical columns.

    During fitting, rows are visited in a seeded random permutation and each
    row is encoded with the label statistics of *earlier* same-category rows
    only, blended with the global prior P under weight ``prior_weight``:
    (sum_earlier + a*P) / (count_earlier + a). The stored final statistics
    use all training rows and are applied to new data; unseen categories
    encode to P exactly.
    """

    def __init__(self, prior_weight=1.0, random_state=0):
        if prior_weight <= 0:
            raise ValueError("prior_weight must be positive")
        self.prior_weight = prior_weight
        self.random_state = random_state

    def fit_ordered(self, columns, y):
        """Fit on training columns and return their ordered encodings.

        ``columns`` is a list of length-n sequences of category strings.
        Returns an (n, n_columns) float matrix of ordered statistics.
        """
        y = as_float_vector(y, "y")
        n = y.shape[0]
        self.prior_ = float(y.mean()) if n else 0.0
        self.stats_ = []
        rng = np.random.default_rng(self.random_state)
        encoded = np.empty((n, len(columns)), dtype=np.float64)
        a = self.prior_weight
        for j, column in enumerate(columns):
            if len(column) != n:
                raise ValueError(
                    f"categorical column {j} has {len(column)} rows, expected {n}"
                )
            permutation = rng.permutation(n)
            position = np.empty(n, dtype=np.int64)
            position[permutation] = np.arange(n)
            running = {}
            stats = {}
            for r in permutation:
                key = column[r]
                total, count = running.get(key, (0.0, 0))
                encoded[r, j] = (total + a * self.prior_) / (count + a)
                running[key] = (total + y[r], count + 1)
            for key, (total, count) in running.items():
                stats[key] = (total, count)
            self.stats_.append(stats)
        return encoded

    def transform(self, columns):
        """Encode columns with the final all-rows statistics."""
        if not hasattr(self, "stats_"):
            raise NotFittedError("OrderedTargetEncoder is not fitted")
        if len(columns) != len(self.stats_):
            raise ValueError(
                f"expected {len(self.stats_)} categorical columns, got {len(columns)}"
            )
        a = self.prior_weight
        n = len(columns[0]) if columns else 0
        encoded = np.empty((n, len(columns)), dtype=np.float64)
        for j, column in enumerate(columns):
            stats = self.stats_[j]
            for r, key in enumerate(column):
                total, count = stats.get(key, (0.0, 0))
                encoded[r, j] = (total + a * self.prior_) / (count + a)
        return encoded

    def to_dict(self):
        return {
            "prior_weight": self.prior_weight,
            "random_state": self.random_state,
            "prior": self.prior_,
            "stats": [
                {key: [total, count] for key, (total, count) in stats.items()}
                for stats in self.stats_
            ],
        }

    @classmethod
    def from_dict(cls, payload):
        encoder = cls(
            prior_weight=payload["prior_weight"],
            random_state=payload["random_state"],
        )
        encoder.prior_ = payload["prior"]
        encoder.stats_ = [
            {key: (entry[0], int(entry[1])) for key, entry in stats.items()}
            for stats in payload["stats"]
        ]
        return encoder


@dataclass
class FeatureImportance:
    """Normalized share of total split gain per feature name."""

    shares: dict
    has_splits: bool

    def aggregated(self, group_of):
        """Sum shares by ``group_of[name]``; unmapped names keep their own name."""
        grouped = {}
        for name, share in self.shares.items():
            key = group_of.get(name, name)
            grouped[key] = grouped.get(key, 0.0) + share
        return grouped


class HuberBoostingRegressor(RegressorMixin, BaseEstimator):
    """From-scratch gradient boosting with Huber loss and ordered encoding.

    ``categorical_features`` lists column indices of X holding category
    strings (X may be an object array); every other column is cast to
    float64. Predictions are ``base_score + learning_rate * sum(tree(x))``
    and are bitwise reproducible for a given seed.
    """

    def __init__(
        self,
        n_trees=500,
        learning_rate=0.05,
        max_depth=6,
        min_samples_leaf=8,
        huber_delta=1.0,
        prior_weight=1.0,
        categorical_features=(),
        random_state=0,
    ):
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.huber_delta = huber_delta
        self.prior_weight = prior_weight
        self.categorical_features = categorical_features
        self.random_state = random_state

    # -- fitting -----------------------------------------------------------

    def _split_columns(self, X):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
        cat_idx = sorted(int(j) for j in self.categorical_features)
        if any(j < 0 or j >= X.shape[1] for j in cat_idx):
            raise ValueError(f"categorical_features {cat_idx} out of range for p={X.shape[1]}")
        num_idx = [j for j in range(X.shape[1]) if j not in set(cat_idx)]
        numeric = X[:, num_idx].astype(np.float64) if num_idx else np.empty((X.shape[0], 0))
        check_finite(numeric, "X (continuous columns)")
        categorical = [[str(v) for v in X[:, j]] for j in cat_idx]
        return numeric, categorical, num_idx, cat_idx

    def _assemble(self, numeric, encoded, num_idx, cat_idx, n_columns):
        design = np.empty((numeric.shape[0], n_columns), dtype=np.float64)
        for k, j in enumerate(num_idx):
            design[:, j] = numeric[:, k]
        for k, j in enumerate(cat_idx):
            design[:, j] = encoded[:, k]
        return np.ascontiguousarray(design)

    def fit(self, X, y, feature_names=None):
        X = np.asarray(X)
        y = as_float_vector(y, "y")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] < 2:
            raise DataError(f"need at least 2 training rows, got {X.shape[0]}")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

        n, p = X.shape
        if feature_names is not None:
            if len(feature_names) != p:
                raise ValueError(
                    f"feature_names has {len(feature_names)} entries for p={p}"
                )
            self.feature_names_ = list(feature_names)
        else:
            self.feature_names_ = [f"f{j}" for j in range(p)]

        numeric, categorical, num_idx, cat_idx = self._split_columns(X)
        self.encoder_ = OrderedTargetEncoder(
            prior_weight=self.prior_weight, random_state=self.random_state
        )
        encoded = self.encoder_.fit_ordered(categorical, y)
        design = self._assemble(numeric, encoded, num_idx, cat_idx, p)
        order = presort_columns(design)

        self.base_score_ = float(np.median(y))
        predictions = np.full(n, self.base_score_, dtype=np.float64)
        self.trees_ = []
        self.gain_sums_ = np.zeros(p, dtype=np.float64)
        losses = [float(np.mean(huber_loss(y, predictions, self.huber_delta)))]
        for _ in range(self.n_trees):
            residuals = huber_pseudo_residuals(y, predictions, self.huber_delta)
            tree, leaf_of = fit_tree(
                design,
                residuals,
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                order=order,
            )
            self.trees_.append(tree)
            self.gain_sums_ += tree.gain_by_feature(p)
            predictions = predictions + self.learning_rate * tree.value[leaf_of]
            losses.append(float(np.mean(huber_loss(y, predictions, self.huber_delta))))
        self.train_loss_ = losses
        self.n_features_in_ = p
        self._num_idx = num_idx
        self._cat_idx = cat_idx
        return self

    # -- inference ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError("HuberBoostingRegressor is not fitted")

    def _design_for_predict(self, X):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
        if X.shape[1] != self.n_features_in_:
            raise SchemaMismatchError(
                f"X has {X.shape[1]} columns but the model was trained on "
                f"{self.n_features_in_}"
            )
        numeric, categorical, num_idx, cat_idx = self._split_columns(X)
        encoded = self.encoder_.transform(categorical)
        return self._assemble(numeric, encoded, num_idx, cat_idx, self.n_features_in_)

    def predict(self, X):
        self._check_fitted()
        design = self._design_for_predict(X)
        out = np.full(design.shape[0], self.base_score_, dtype=np.float64)
        increment = np.zeros_like(out)
        for tree in self.trees_:
            increment += tree.predict(design)
        return out + self.learning_rate * increment

    def feature_importance(self):
        """Share of summed split gain per feature; zeros when no splits exist."""
        self._check_fitted()
        total = self.gain_sums_.sum()
        if total <= 0.0:
            return FeatureImportance(
                shares={name: 0.0 for name in self.feature_names_},
                has_splits=False,
            )
        shares = self.gain_sums_ / total
        return FeatureImportance(
            shares={name: float(s) for name, s in zip(self.feature_names_, shares)},
            has_splits=True,
        )

    # -- persistence ---------------------------------------------------------

    def to_dict(self, schema_hash=None):
        self._check_fitted()
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": {
                "n_trees": self.n_trees,
                "learning_rate": self.learning_rate,
                "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf,
                "huber_delta": self.huber_delta,
                "prior_weight": self.prior_weight,
                "categorical_features": [int(j) for j in self.categorical_features],
                "random_state": self.random_state,
            },
            "base_score": self.base_score_,
            "feature_names": self.feature_names_,
            "encoder": self.encoder_.to_dict(),
            "trees": [tree.to_dict() for tree in self.trees_],
            "gain_sums": self.gain_sums_.tolist(),
            "train_loss": self.train_loss_,
            "schema_hash": schema_hash,
        }

    @classmethod
    def from_dict(cls, payload):
        if payload.get("format") != MODEL_FORMAT:
            raise DataError(f"not a {MODEL_FORMAT} document")
        if payload.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model version {payload.get('version')}")
        config = dict(payload["config"])
        config["categorical_features"] = tuple(config["categorical_features"])
        model = cls(**config)
        model.base_score_ = payload["base_score"]
        model.feature_names_ = list(payload["feature_names"])
        model.encoder_ = OrderedTargetEncoder.from_dict(payload["encoder"])
        model.trees_ = [RegressionTree.from_dict(t) for t in payload["trees"]]
        model.gain_sums_ = np.array(payload["gain_sums"], dtype=np.float64)
        model.train_loss_ = list(payload["train_loss"])
        p = len(model.feature_names_)
        model.n_features_in_ = p
        cat = set(config["categorical_features"])
        model._cat_idx = sorted(cat)
        model._num_idx = [j for j in range(p) if j not in cat]
        return model

    def save(self, path, schema_hash=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(schema_hash=schema_hash), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
