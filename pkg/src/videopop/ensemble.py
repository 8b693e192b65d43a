"""K-fold training, ensemble prediction, MAPE scoring, ablation, reporting.

Each fold fits its own preprocessing state (label outlier fence, PCA,
imputation medians, tag table, categorical encoder) on the other K-1 folds
only, then trains one regressor; ensemble prediction averages the K member
outputs, each produced under its member's preprocessing. Ablation rows all
share the same seed and fold assignment so the comparisons differ only in
the toggled component.
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_same_length
from .errors import ConfigError, DataError
from .features import FEATURE_GROUPS, FeatureBuilder, pooled_maps
from .gbdt import HuberBoostingRegressor
from .preprocess import filter_label_outliers

ENSEMBLE_FORMAT = "videopop-ensemble"
ENSEMBLE_VERSION = 1

ABLATION_GROUPS = FEATURE_GROUPS + ("outlier_removal", "kfold_ensemble")

NEAR_ZERO_GUARD = 1e-6
HISTOGRAM_BINS = 40


@dataclass(frozen=True)
class FoldAssignment:
    """Seeded shuffle of row indices cut into K nearly equal contiguous chunks."""

    n: int
    k: int
    seed: int
    fold_of: np.ndarray

    def train_indices(self, fold):
        return np.flatnonzero(self.fold_of != fold)

    def validation_indices(self, fold):
        return np.flatnonzero(self.fold_of == fold)


def kfold_split(n, k, seed):
    """Assign each of n rows to one of k folds; sizes differ by at most one.

    The shuffled order is cut into contiguous chunks and the first (n mod k)
    folds receive the extra row.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise DataError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    base, extra = divmod(n, k)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        fold_of[order[start : start + size]] = fold
        start += size
    return FoldAssignment(n=n, k=k, seed=seed, fold_of=fold_of)


@dataclass
class MapeResult:
    value: float
    n_used: int
    excluded_near_zero: int


def mape_result(y, yhat, near_zero=NEAR_ZERO_GUARD):
    """Mean absolute percentage error, excluding |y| below the guard."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    check_same_length(y, yhat)
    if len(y) < 1:
        raise ValueError("MAPE needs at least one sample")
    included = np.abs(y) >= near_zero
    excluded = int(np.sum(~included))
    if not np.any(included):
        raise DataError("MAPE undefined: all rows excluded by the near-zero guard")
    value = float(np.mean(np.abs(y[included] - yhat[included]) / np.abs(y[included])))
    return MapeResult(value=value, n_used=int(included.sum()), excluded_near_zero=excluded)


def mape(y, yhat, near_zero=NEAR_ZERO_GUARD):
    return mape_result(y, yhat, near_zero).value


@dataclass
class HistogramPair:
    """Label and prediction counts over shared bin edges."""

    edges: np.ndarray
    label_counts: np.ndarray
    prediction_counts: np.ndarray

    def to_dict(self):
        return {
            "edges": self.edges.tolist(),
            "label_counts": self.label_counts.tolist(),
            "prediction_counts": self.prediction_counts.tolist(),
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "label_count", "prediction_count"])
            for i in range(len(self.label_counts)):
                writer.writerow(
                    [
                        repr(float(self.edges[i])),
                        repr(float(self.edges[i + 1])),
                        int(self.label_counts[i]),
                        int(self.prediction_counts[i]),
                    ]
                )


def distribution_summary(y, yhat, n_bins=HISTOGRAM_BINS):
    """Histogram both series over shared edges spanning their union."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.size == 0 or yhat.size == 0:
        raise DataError("distribution_summary requires non-empty inputs")
    lo = min(y.min(), yhat.min())
    hi = max(y.max(), yhat.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    label_counts, _ = np.histogram(y, bins=edges)
    prediction_counts, _ = np.histogram(yhat, bins=edges)
    return HistogramPair(edges=edges, label_counts=label_counts, prediction_counts=prediction_counts)


@dataclass
class PipelineConfig:
    """Everything needed to train the fold ensemble deterministically."""

    k_folds: int = 5
    seed: int = 42
    pca_components: int = 64
    outlier_removal: bool = True
    feature_groups: tuple = FEATURE_GROUPS
    tag_smoothing: float = 0.0
    n_trees: int = 500
    learning_rate: float = 0.05
    max_depth: int = 6
    min_samples_leaf: int = 8
    huber_delta: float = 1.0
    prior_weight: float = 1.0
    near_zero_guard: float = NEAR_ZERO_GUARD
    histogram_bins: int = HISTOGRAM_BINS

    def to_dict(self):
        payload = self.__dict__.copy()
        payload["feature_groups"] = list(self.feature_groups)
        return payload

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        if "feature_groups" in payload:
            payload["feature_groups"] = tuple(payload["feature_groups"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys {sorted(unknown)}")
        return cls(**payload)


def _fold_seed(seed, fold):
    """Stable per-fold seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


@dataclass
class FoldMember:
    """One fold's fitted preprocessing plus its regressor."""

    fold: int
    builder: FeatureBuilder
    model: HuberBoostingRegressor
    n_train: int
    n_dropped_outliers: int

    def to_dict(self):
        return {
            "fold": self.fold,
            "builder": self.builder.to_dict(),
            "model": self.model.to_dict(schema_hash=self.builder.schema_.hash()),
            "n_train": self.n_train,
            "n_dropped_outliers": self.n_dropped_outliers,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            fold=payload["fold"],
            builder=FeatureBuilder.from_dict(payload["builder"]),
            model=HuberBoostingRegressor.from_dict(payload["model"]),
            n_train=payload["n_train"],
            n_dropped_outliers=payload["n_dropped_outliers"],
        )


@dataclass
class EnsembleModel:
    """K fold-trained members plus the shared configuration and schema."""

    config: PipelineConfig
    members: list
    fold_seed: int

    @property
    def schema(self):
        return self.members[0].builder.schema_

    def schema_hash(self):
        return self.schema.hash()

    def predict(self, dataset):
        """Average the member predictions, each under its own preprocessing."""
        pooled_video, pooled_text = pooled_maps(dataset)
        total = np.zeros(len(dataset.examples), dtype=np.float64)
        for member in self.members:
            design = member.builder.transform(dataset.examples, pooled_video, pooled_text)
            total += member.model.predict(design)
        return total / len(self.members)

    def importance(self):
        """Per-feature importance shares averaged over folds (renormalized)."""
        names = self.schema.names
        accumulated = {name: 0.0 for name in names}
        any_splits = False
        for member in self.members:
            importance = member.model.feature_importance()
            any_splits = any_splits or importance.has_splits
            for name, share in importance.shares.items():
                accumulated[name] += share
        total = sum(accumulated.values())
        if total > 0:
            accumulated = {name: share / total for name, share in accumulated.items()}
        return accumulated, any_splits

    def to_dict(self):
        return {
            "format": ENSEMBLE_FORMAT,
            "version": ENSEMBLE_VERSION,
            "config": self.config.to_dict(),
            "schema_hash": self.schema_hash(),
            "fold_seed": self.fold_seed,
            "members": [member.to_dict() for member in self.members],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload):
        if payload.get("format") != ENSEMBLE_FORMAT:
            raise DataError(f"not a {ENSEMBLE_FORMAT} document")
        if payload.get("version") != ENSEMBLE_VERSION:
            raise DataError(f"unsupported ensemble version {payload.get('version')}")
        return cls(
            config=PipelineConfig.from_dict(payload["config"]),
            members=[FoldMember.from_dict(m) for m in payload["members"]],
            fold_seed=payload["fold_seed"],
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CrossValReport:
    """Out-of-fold evaluation gathered during train_cv."""

    per_fold_mape: list
    oof_mape: MapeResult
    baseline_mape: MapeResult
    oof_predictions: np.ndarray
    dropped_outliers: int


def _fit_fold(examples, train_idx, config, pooled_video, pooled_text, fold, fold_seed):
    train_examples = [examples[i] for i in train_idx]
    dropped = 0
    if config.outlier_removal:
        if len(train_examples) >= 4:
            train_examples, dropped_examples, _ = filter_label_outliers(train_examples)
            dropped = len(dropped_examples)
    if len(train_examples) < 2:
        raise DataError(
            f"fold {fold}: fewer than 2 training rows remain after outlier filtering"
        )
    builder = FeatureBuilder(
        groups=config.feature_groups,
        pca_components=config.pca_components,
        tag_smoothing=config.tag_smoothing,
    ).fit(train_examples, pooled_video, pooled_text)
    design = builder.transform(train_examples, pooled_video, pooled_text)
    labels = np.array([ex.label for ex in train_examples], dtype=np.float64)
    model = HuberBoostingRegressor(
        n_trees=config.n_trees,
        learning_rate=config.learning_rate,
        max_depth=config.max_depth,
        min_samples_leaf=config.min_samples_leaf,
        huber_delta=config.huber_delta,
        prior_weight=config.prior_weight,
        categorical_features=builder.schema_.categorical_indices,
        random_state=fold_seed,
    ).fit(design, labels, feature_names=builder.schema_.names)
    member = FoldMember(
        fold=fold,
        builder=builder,
        model=model,
        n_train=len(train_examples),
        n_dropped_outliers=dropped,
    )
    train_labels = labels
    return member, train_labels


def train_cv(dataset, config=None):
    """Train the K-fold ensemble; returns (EnsembleModel, CrossValReport).

    All leak-prone state is fitted per fold on that fold's training rows
    only. The report carries per-fold validation MAPE, the pooled
    out-of-fold MAPE, and a mean-predictor baseline on the same folds.
    """
    if config is None:
        config = PipelineConfig()
    examples = dataset.examples
    n = len(examples)
    assignment = kfold_split(n, config.k_folds, config.seed)
    pooled_video, pooled_text = pooled_maps(dataset)
    labels = dataset.labels()

    members = []
    per_fold = []
    oof = np.empty(n, dtype=np.float64)
    baseline = np.empty(n, dtype=np.float64)
    total_dropped = 0
    for fold in range(config.k_folds):
        train_idx = assignment.train_indices(fold)
        val_idx = assignment.validation_indices(fold)
        member, train_labels = _fit_fold(
            examples,
            train_idx,
            config,
            pooled_video,
            pooled_text,
            fold,
            _fold_seed(config.seed, fold),
        )
        members.append(member)
        total_dropped += member.n_dropped_outliers
        val_examples = [examples[i] for i in val_idx]
        design = member.builder.transform(val_examples, pooled_video, pooled_text)
        predictions = member.model.predict(design)
        oof[val_idx] = predictions
        baseline[val_idx] = float(train_labels.mean())
        per_fold.append(
            mape_result(labels[val_idx], predictions, config.near_zero_guard).value
        )
    report = CrossValReport(
        per_fold_mape=per_fold,
        oof_mape=mape_result(labels, oof, config.near_zero_guard),
        baseline_mape=mape_result(labels, baseline, config.near_zero_guard),
        oof_predictions=oof,
        dropped_outliers=total_dropped,
    )
    model = EnsembleModel(config=config, members=members, fold_seed=config.seed)
    return model, report


def predict_ensemble(model, dataset):
    """Eq-style fold averaging: mean of the member predictions."""
    return model.predict(dataset)


def _single_split_mape(dataset, config):
    """The no-ensemble ablation: one model on a seeded 80/20 split.

    Reuses the shared fold assignment (fold 0 is the 20% holdout) so the
    row differs from the others only in the toggled component.
    """
    examples = dataset.examples
    assignment = kfold_split(len(examples), config.k_folds, config.seed)
    pooled_video, pooled_text = pooled_maps(dataset)
    train_idx = assignment.train_indices(0)
    val_idx = assignment.validation_indices(0)
    member, _ = _fit_fold(
        examples, train_idx, config, pooled_video, pooled_text, 0, _fold_seed(config.seed, 0)
    )
    val_examples = [examples[i] for i in val_idx]
    design = member.builder.transform(val_examples, pooled_video, pooled_text)
    predictions = member.model.predict(design)
    labels = np.array([ex.label for ex in val_examples])
    return mape_result(labels, predictions, config.near_zero_guard).value


@dataclass
class MetricsReport:
    """MAPE, ablation table, importance shares, and distribution histograms."""

    mape: float
    n: int
    excluded_near_zero: int
    per_fold_mape: list = field(default_factory=list)
    baseline_mape: float | None = None
    ablation: dict = field(default_factory=dict)
    skipped_ablations: dict = field(default_factory=dict)
    importance: dict = field(default_factory=dict)
    importance_blocks: dict = field(default_factory=dict)
    importance_groups: dict = field(default_factory=dict)
    histograms: HistogramPair | None = None

    def to_dict(self):
        return {
            "mape": self.mape,
            "n": self.n,
            "excluded_near_zero": self.excluded_near_zero,
            "per_fold_mape": self.per_fold_mape,
            "baseline_mape": self.baseline_mape,
            "ablation": self.ablation,
            "skipped_ablations": self.skipped_ablations,
            "importance": self.importance,
            "importance_blocks": self.importance_blocks,
            "importance_groups": self.importance_groups,
            "histograms": self.histograms.to_dict() if self.histograms else None,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_ablation_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["configuration", "mape"])
            writer.writerow(["full", repr(self.mape)])
            for group in sorted(self.ablation):
                writer.writerow([f"without_{group}", repr(self.ablation[group])])
            for group in sorted(self.skipped_ablations):
                writer.writerow([f"without_{group}", "skipped"])

    def write_importance_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["scope", "name", "share"])
            for name, share in self.importance.items():
                writer.writerow(["feature", name, repr(share)])
            for name, share in sorted(self.importance_blocks.items()):
                writer.writerow(["block", name, repr(share)])
            for name, share in sorted(self.importance_groups.items()):
                writer.writerow(["group", name, repr(share)])


def evaluation_report(model, report, config):
    """Assemble the MetricsReport for one trained ensemble."""
    importance, _ = model.importance()
    block_of = model.schema.block_of()
    group_of = model.schema.group_of()
    blocks = {}
    groups = {}
    for name, share in importance.items():
        blocks[block_of[name]] = blocks.get(block_of[name], 0.0) + share
        groups[group_of[name]] = groups.get(group_of[name], 0.0) + share
    return MetricsReport(
        mape=report.oof_mape.value,
        n=report.oof_mape.n_used,
        excluded_near_zero=report.oof_mape.excluded_near_zero,
        per_fold_mape=report.per_fold_mape,
        baseline_mape=report.baseline_mape.value,
        importance=importance,
        importance_blocks=blocks,
        importance_groups=groups,
    )


def ablation_run(dataset, config=None, groups=None):
    """Retrain with each group removed; report MAPE per configuration.

    Feature groups are dropped through the fusion schema; outlier_removal
    and kfold_ensemble are procedure switches. Groups absent from the
    fitted schema are skipped with a notice. All rows share the same seed
    and fold assignment.
    """
    if config is None:
        config = PipelineConfig()
    if groups is None:
        groups = ABLATION_GROUPS
    unknown = set(groups) - set(ABLATION_GROUPS)
    if unknown:
        raise ConfigError(f"unknown ablation groups {sorted(unknown)}")

    model, full_report = train_cv(dataset, config)
    metrics = evaluation_report(model, full_report, config)
    labels = dataset.labels()
    metrics.histograms = distribution_summary(
        labels, full_report.oof_predictions, config.histogram_bins
    )

    active = set(model.schema.groups_present())
    for group in groups:
        if group in FEATURE_GROUPS:
            if group not in active:
                metrics.skipped_ablations[group] = "group absent from the fitted schema"
                continue
            remaining = tuple(g for g in config.feature_groups if g != group)
            ablated = replace(config, feature_groups=remaining)
            _, ablation_report = train_cv(dataset, ablated)
            metrics.ablation[group] = ablation_report.oof_mape.value
        elif group == "outlier_removal":
            if not config.outlier_removal:
                metrics.skipped_ablations[group] = "outlier removal already disabled"
                continue
            ablated = replace(config, outlier_removal=False)
            _, ablation_report = train_cv(dataset, ablated)
            metrics.ablation[group] = ablation_report.oof_mape.value
        elif group == "kfold_ensemble":
            metrics.ablation[group] = _single_split_mape(dataset, config)
    return metrics
