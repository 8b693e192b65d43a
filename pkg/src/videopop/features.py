"""Context features and multimodal fusion.

Builds the user, temporal, text-statistic, tag-popularity, and metadata
blocks, pairs them with the projected video block, and concatenates
everything into one design matrix with a recorded schema. The schema names
every column, marks it continuous or categorical, and assigns it to an
ablation group so feature spans can be dropped or reported in aggregate.

All fitted state (imputation medians, tag table, winsorize fences,
normalization moments, PCA) comes from the training fold only; transform is
pure and safe to run concurrently.
"""

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .dataset import USER_COUNT_FIELDS
from .errors import DataError, SchemaMismatchError
from .preprocess import ColumnStats, IqrWinsorizer, PopulationScaler, log1p_transform
from .visual import FramePCA, pool_embeddings

FEATURE_GROUPS = (
    "video_embedding",
    "text_embedding",
    "tag_popularity",
    "metadata",
    "temporal",
    "user",
)

BLOCK_ORDER = ("visual", "user", "meta")

UNKNOWN_CATEGORY = "unknown"

# Unicode alphanumeric runs (underscore excluded); empty tokens discarded.
_TOKEN_PATTERN = re.compile(r"[^\W_]+", re.UNICODE)

SECONDS_PER_DAY = 86400
SECONDS_PER_HOUR = 3600
# 1970-01-01 was a Thursday; day-of-week is encoded Monday=0.
_EPOCH_WEEKDAY = 3


@dataclass(frozen=True)
class TemporalFeatures:
    hour_of_day: int
    day_of_week: int


@dataclass(frozen=True)
class TextStats:
    caption_chars: int
    caption_tokens: int
    suggested_words_len: int


def temporal_encode(post_timestamp):
    """Hour of day and day of week (Monday=0) from UTC epoch seconds."""
    if post_timestamp < 0:
        raise DataError("negative post_timestamp")
    hour = (post_timestamp % SECONDS_PER_DAY) // SECONDS_PER_HOUR
    day = (post_timestamp // SECONDS_PER_DAY + _EPOCH_WEEKDAY) % 7
    return TemporalFeatures(hour_of_day=int(hour), day_of_week=int(day))


def text_stats(caption, suggested_keywords):
    """Character count, lowercase alphanumeric token count, keyword count."""
    tokens = _TOKEN_PATTERN.findall(caption.lower())
    return TextStats(
        caption_chars=len(caption),
        caption_tokens=len(tokens),
        suggested_words_len=len(suggested_keywords),
    )


def user_features(profile, history_median):
    """Log-transformed account counts plus imputed historical popularity.

    Missing counts impute to zero before the log; a missing
    historical_mean_popularity takes the training-fold median.
    """
    values = []
    for field in USER_COUNT_FIELDS:
        count = getattr(profile, field)
        values.append(log1p_transform(0 if count is None else count))
    history = profile.historical_mean_popularity
    values.append(history_median if history is None else float(history))
    return np.array(values, dtype=np.float64)


USER_FEATURE_NAMES = tuple(f"log_{field}" for field in USER_COUNT_FIELDS) + (
    "historical_mean_popularity",
)


class TagPopularityEncoder:
    """Mean training label per tag, with a global-mean fallback.

    A post's value is the mean over its tags of each tag's (optionally
    smoothed) training-label mean; unseen tags contribute the global mean,
    and a post with no tags gets the global mean outright.
    """

    def __init__(self, smoothing=0.0):
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.smoothing = smoothing

    def fit(self, tags_per_post, labels):
        labels = np.asarray(labels, dtype=np.float64)
        if len(tags_per_post) != len(labels):
            raise ValueError("tags_per_post and labels must align")
        table = {}
        for tags, label in zip(tags_per_post, labels):
            for tag in tags:
                total, count = table.get(tag, (0.0, 0))
                table[tag] = (total + float(label), count + 1)
        self.table_ = table
        self.global_mean_ = float(labels.mean()) if len(labels) else 0.0
        return self

    def _tag_mean(self, tag):
        entry = self.table_.get(tag)
        if entry is None:
            return self.global_mean_
        total, count = entry
        if self.smoothing > 0:
            return (total + self.smoothing * self.global_mean_) / (count + self.smoothing)
        return total / count

    def value(self, tags):
        if not tags:
            return self.global_mean_
        return float(np.mean([self._tag_mean(tag) for tag in tags]))

    def to_dict(self):
        return {
            "smoothing": self.smoothing,
            "global_mean": self.global_mean_,
            "table": {tag: [total, count] for tag, (total, count) in self.table_.items()},
        }

    @classmethod
    def from_dict(cls, payload):
        encoder = cls(smoothing=payload["smoothing"])
        encoder.global_mean_ = payload["global_mean"]
        encoder.table_ = {
            tag: (entry[0], int(entry[1])) for tag, entry in payload["table"].items()
        }
        return encoder


META_CONTINUOUS_NAMES = (
    "duration_s",
    "width_px",
    "height_px",
    "aspect_ratio",
    "caption_chars",
    "caption_tokens",
    "suggested_words_len",
    "tag_mean_popularity",
)

META_CATEGORICAL_NAMES = (
    "category",
    "language",
    "location",
    "video_format",
    "music_id",
    "hour_of_day",
    "day_of_week",
)

# Ablation group of each named feature; video/text embedding dims are added
# programmatically.
_GROUP_OF_NAME = {
    **{name: "user" for name in USER_FEATURE_NAMES},
    "duration_s": "metadata",
    "width_px": "metadata",
    "height_px": "metadata",
    "aspect_ratio": "metadata",
    "caption_chars": "metadata",
    "caption_tokens": "metadata",
    "suggested_words_len": "metadata",
    "tag_mean_popularity": "tag_popularity",
    "category": "metadata",
    "language": "metadata",
    "location": "metadata",
    "video_format": "metadata",
    "music_id": "metadata",
    "hour_of_day": "temporal",
    "day_of_week": "temporal",
}


def metadata_features(post, tag_value, medians):
    """Continuous metadata values and categorical passthrough for one post.

    ``medians`` supplies training-fold imputation values for duration_s,
    width_px, and height_px. Categorical blanks become "unknown"; the
    model-side encoder owns all category-to-number mapping.
    """
    duration = medians["duration_s"] if post.duration_s is None else post.duration_s
    width = medians["width_px"] if post.width_px is None else float(post.width_px)
    height = medians["height_px"] if post.height_px is None else float(post.height_px)
    if height <= 0:
        raise DataError(f"post {post.post_id!r}: non-positive height_px")
    stats = text_stats(post.caption, post.suggested_keywords)
    temporal = temporal_encode(post.post_timestamp)
    continuous = np.array(
        [
            duration,
            width,
            height,
            width / height,
            stats.caption_chars,
            stats.caption_tokens,
            stats.suggested_words_len,
            tag_value,
        ],
        dtype=np.float64,
    )

    def category(value):
        return UNKNOWN_CATEGORY if value is None else value

    categorical = [
        category(post.category),
        category(post.language),
        category(post.location),
        category(post.video_format),
        category(post.music_id),
        str(temporal.hour_of_day),
        str(temporal.day_of_week),
    ]
    return continuous, categorical


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: str  # "continuous" | "categorical"
    block: str  # "visual" | "user" | "meta"
    group: str  # ablation group


@dataclass
class FeatureSchema:
    """Ordered column descriptions for the fused design matrix."""

    columns: list

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def categorical_indices(self):
        return tuple(j for j, c in enumerate(self.columns) if c.kind == "categorical")

    def group_of(self):
        return {c.name: c.group for c in self.columns}

    def block_of(self):
        return {c.name: c.block for c in self.columns}

    def groups_present(self):
        return sorted({c.group for c in self.columns})

    def block_spans(self):
        """Contiguous (start, stop) span of each block, in canonical order."""
        spans = {}
        for j, column in enumerate(self.columns):
            start, stop = spans.get(column.block, (j, j))
            spans[column.block] = (min(start, j), max(stop, j + 1))
        return spans

    def to_dict(self):
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, "block": c.block, "group": c.group}
                for c in self.columns
            ]
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(columns=[FeatureColumn(**entry) for entry in payload["columns"]])

    def hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(canonical).hexdigest()


def build_schema(n_visual, n_text, groups):
    """Assemble the canonical column order: visual, user, then meta."""
    columns = []
    if "video_embedding" in groups and n_visual > 0:
        for j in range(n_visual):
            columns.append(
                FeatureColumn(f"video_embedding_{j:03d}", "continuous", "visual", "video_embedding")
            )
    if "user" in groups:
        for name in USER_FEATURE_NAMES:
            columns.append(FeatureColumn(name, "continuous", "user", "user"))
    for name in META_CONTINUOUS_NAMES:
        group = _GROUP_OF_NAME[name]
        if group in groups:
            columns.append(FeatureColumn(name, "continuous", "meta", group))
    if "text_embedding" in groups and n_text > 0:
        for j in range(n_text):
            columns.append(
                FeatureColumn(f"text_embedding_{j:03d}", "continuous", "meta", "text_embedding")
            )
    for name in META_CATEGORICAL_NAMES:
        group = _GROUP_OF_NAME[name]
        if group in groups:
            columns.append(FeatureColumn(name, "categorical", "meta", group))
    if not columns:
        raise DataError("feature schema is empty: every group was disabled")
    return FeatureSchema(columns=columns)


def fuse_blocks(blocks, schema):
    """Concatenate feature blocks in canonical order, validating widths.

    ``blocks`` maps block name to an (n, width) object or float array; the
    output column order always follows the schema regardless of the order
    blocks are supplied in.
    """
    spans = schema.block_spans()
    n_rows = None
    for name, (start, stop) in spans.items():
        if name not in blocks:
            raise DataError(f"block '{name}' missing from fuse input")
        width = blocks[name].shape[1]
        if width != stop - start:
            raise DataError(
                f"block '{name}' has width {width}, schema expects {stop - start}"
            )
        if n_rows is None:
            n_rows = blocks[name].shape[0]
        elif blocks[name].shape[0] != n_rows:
            raise DataError(f"block '{name}' has {blocks[name].shape[0]} rows, expected {n_rows}")
    total = len(schema.columns)
    fused = np.empty((n_rows, total), dtype=object)
    for name, (start, stop) in spans.items():
        fused[:, start:stop] = blocks[name]
    return fused


class FeatureBuilder:
    """Fold-fitted mapping from labeled examples to the fused design matrix.

    ``fit`` learns every leak-prone statistic (PCA, imputation medians, tag
    table, winsorize fences, normalization moments) from the supplied
    training examples; ``transform`` then renders any examples — training,
    validation, or unseen — against that frozen state.
    """

    def __init__(self, groups=FEATURE_GROUPS, pca_components=64, tag_smoothing=0.0):
        unknown = set(groups) - set(FEATURE_GROUPS)
        if unknown:
            raise ValueError(f"unknown feature groups {sorted(unknown)}")
        self.groups = tuple(groups)
        self.pca_components = pca_components
        self.tag_smoothing = tag_smoothing

    # -- fitting -------------------------------------------------------------

    def fit(self, examples, pooled_video=None, pooled_text=None):
        if not examples:
            raise DataError("cannot fit features on an empty training fold")
        labels = np.array([ex.label for ex in examples], dtype=np.float64)
        groups = set(self.groups)
        if pooled_video is None:
            groups.discard("video_embedding")
        if pooled_text is None:
            groups.discard("text_embedding")
        self._active_groups = groups

        self.pca_ = None
        self._video_median = None
        n_visual = 0
        if "video_embedding" in groups:
            available = [
                pooled_video[ex.post.post_id]
                for ex in examples
                if ex.post.post_id in pooled_video
            ]
            if not available:
                raise DataError("no training post has video embedding rows")
            pooled = np.vstack(available)
            self._video_median = np.median(pooled, axis=0)
            self.pca_ = FramePCA(n_components=self.pca_components).fit(pooled)
            n_visual = self.pca_.n_components_

        self._text_median = None
        n_text = 0
        if "text_embedding" in groups:
            available = [
                pooled_text[ex.post.post_id]
                for ex in examples
                if ex.post.post_id in pooled_text
            ]
            if not available:
                raise DataError("no training post has text embedding rows")
            stacked = np.vstack(available)
            self._text_median = np.median(stacked, axis=0)
            n_text = stacked.shape[1]

        def observed_median(values, fallback):
            values = [v for v in values if v is not None]
            return float(np.median(values)) if values else fallback

        self.history_median_ = observed_median(
            [ex.user.historical_mean_popularity for ex in examples],
            fallback=float(labels.mean()),
        )
        self.meta_medians_ = {
            "duration_s": observed_median([ex.post.duration_s for ex in examples], 0.0),
            "width_px": observed_median([ex.post.width_px for ex in examples], 1.0),
            "height_px": observed_median([ex.post.height_px for ex in examples], 1.0),
        }

        self.tag_encoder_ = None
        if "tag_popularity" in groups:
            self.tag_encoder_ = TagPopularityEncoder(smoothing=self.tag_smoothing).fit(
                [ex.post.tags for ex in examples], labels
            )

        self.schema_ = build_schema(n_visual, n_text, groups)

        raw_continuous, raw_categorical = self._raw_columns(examples, pooled_video, pooled_text)
        cat_names = [c.name for c in self.schema_.columns if c.kind == "categorical"]
        self.cat_vocab_ = {
            name: set(raw_categorical[:, j]) for j, name in enumerate(cat_names)
        }
        self.winsorizer_ = IqrWinsorizer().fit(raw_continuous)
        self.scaler_ = PopulationScaler().fit(self.winsorizer_.transform(raw_continuous))
        return self

    # -- rendering -----------------------------------------------------------

    def _continuous_names(self):
        return [c.name for c in self.schema_.columns if c.kind == "continuous"]

    def _raw_columns(self, examples, pooled_video, pooled_text):
        """Unnormalized continuous matrix and categorical columns, schema order."""
        n = len(examples)
        groups = self._active_groups
        parts = []
        if "video_embedding" in groups:
            pooled_rows = np.vstack(
                [
                    pooled_video.get(ex.post.post_id, self._video_median)
                    if pooled_video is not None
                    else self._video_median
                    for ex in examples
                ]
            )
            parts.append(self.pca_.transform(pooled_rows))
        if "user" in groups:
            parts.append(
                np.vstack([user_features(ex.user, self.history_median_) for ex in examples])
            )
        meta_cont_names = [
            name for name in META_CONTINUOUS_NAMES if _GROUP_OF_NAME[name] in groups
        ]
        meta_rows = np.empty((n, len(meta_cont_names)), dtype=np.float64)
        categorical = []
        cat_names = [name for name in META_CATEGORICAL_NAMES if _GROUP_OF_NAME[name] in groups]
        cat_matrix = np.empty((n, len(cat_names)), dtype=object)
        for i, ex in enumerate(examples):
            tag_value = (
                self.tag_encoder_.value(ex.post.tags) if self.tag_encoder_ is not None else 0.0
            )
            continuous, cats = metadata_features(ex.post, tag_value, self.meta_medians_)
            full = dict(zip(META_CONTINUOUS_NAMES, continuous))
            meta_rows[i] = [full[name] for name in meta_cont_names]
            full_cats = dict(zip(META_CATEGORICAL_NAMES, cats))
            cat_matrix[i] = [full_cats[name] for name in cat_names]
        if meta_cont_names:
            parts.append(meta_rows)
        if "text_embedding" in groups:
            text_rows = np.vstack(
                [
                    pooled_text.get(ex.post.post_id, self._text_median)
                    if pooled_text is not None
                    else self._text_median
                    for ex in examples
                ]
            )
            parts.append(text_rows)
        continuous = (
            np.hstack(parts) if parts else np.empty((n, 0), dtype=np.float64)
        )
        return continuous, cat_matrix

    def transform(self, examples, pooled_video=None, pooled_text=None):
        """Render examples into the fused (n, p) design matrix (object dtype)."""
        if not hasattr(self, "schema_"):
            raise RuntimeError("FeatureBuilder is not fitted")
        if not examples:
            raise DataError("cannot transform an empty example list")
        if "video_embedding" in self._active_groups and pooled_video is None:
            raise SchemaMismatchError(
                "the fitted schema includes video_embedding but no video "
                "embeddings were supplied"
            )
        if "text_embedding" in self._active_groups and pooled_text is None:
            raise SchemaMismatchError(
                "the fitted schema includes text_embedding but no text "
                "embeddings were supplied"
            )
        continuous, categorical = self._raw_columns(examples, pooled_video, pooled_text)
        normalized = self.scaler_.transform(self.winsorizer_.transform(continuous))

        spans = self.schema_.block_spans()
        blocks = {}
        cont_cursor = 0
        for block in BLOCK_ORDER:
            if block not in spans:
                continue
            start, stop = spans[block]
            width = stop - start
            if block == "meta":
                n_cat = categorical.shape[1]
                n_cont = width - n_cat
                part = np.empty((len(examples), width), dtype=object)
                part[:, :n_cont] = normalized[:, cont_cursor : cont_cursor + n_cont]
                part[:, n_cont:] = categorical
                cont_cursor += n_cont
            else:
                part = normalized[:, cont_cursor : cont_cursor + width].astype(object)
                cont_cursor += width
            blocks[block] = part
        return fuse_blocks(blocks, self.schema_)

    def column_stats(self):
        """Serializable view of the fitted continuous/categorical state."""
        names = self._continuous_names()
        vocab = {name: set(values) for name, values in self.cat_vocab_.items()}
        return ColumnStats(
            continuous_names=names,
            medians=np.array(
                [self.meta_medians_.get(name, 0.0) for name in names]
            ),
            lower=self.winsorizer_.lower_,
            upper=self.winsorizer_.upper_,
            means=self.scaler_.mean_,
            stds=self.scaler_.scale_,
            categorical_vocab=vocab,
        )

    # -- persistence -----------------------------------------------------------

    def to_dict(self):
        return {
            "groups": list(self.groups),
            "active_groups": sorted(self._active_groups),
            "pca_components": self.pca_components,
            "tag_smoothing": self.tag_smoothing,
            "schema": self.schema_.to_dict(),
            "pca": self.pca_.to_dict() if self.pca_ is not None else None,
            "video_median": (
                self._video_median.tolist() if self._video_median is not None else None
            ),
            "text_median": (
                self._text_median.tolist() if self._text_median is not None else None
            ),
            "history_median": self.history_median_,
            "meta_medians": self.meta_medians_,
            "tag_encoder": (
                self.tag_encoder_.to_dict() if self.tag_encoder_ is not None else None
            ),
            "cat_vocab": {name: sorted(values) for name, values in self.cat_vocab_.items()},
            "winsorize_lower": self.winsorizer_.lower_.tolist(),
            "winsorize_upper": self.winsorizer_.upper_.tolist(),
            "scale_mean": self.scaler_.mean_.tolist(),
            "scale_std": self.scaler_.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        builder = cls(
            groups=tuple(payload["groups"]),
            pca_components=payload["pca_components"],
            tag_smoothing=payload["tag_smoothing"],
        )
        builder._active_groups = set(payload["active_groups"])
        builder.schema_ = FeatureSchema.from_dict(payload["schema"])
        builder.pca_ = (
            FramePCA.from_dict(payload["pca"]) if payload["pca"] is not None else None
        )
        builder._video_median = (
            np.array(payload["video_median"]) if payload["video_median"] is not None else None
        )
        builder._text_median = (
            np.array(payload["text_median"]) if payload["text_median"] is not None else None
        )
        builder.history_median_ = payload["history_median"]
        builder.meta_medians_ = dict(payload["meta_medians"])
        builder.tag_encoder_ = (
            TagPopularityEncoder.from_dict(payload["tag_encoder"])
            if payload["tag_encoder"] is not None
            else None
        )
        builder.cat_vocab_ = {
            name: set(values) for name, values in payload["cat_vocab"].items()
        }
        n_cont = len(payload["scale_mean"])
        winsorizer = IqrWinsorizer()
        winsorizer.lower_ = np.array(payload["winsorize_lower"])
        winsorizer.upper_ = np.array(payload["winsorize_upper"])
        winsorizer.bounds_ = None
        winsorizer.n_features_in_ = n_cont
        builder.winsorizer_ = winsorizer
        scaler = PopulationScaler()
        scaler.mean_ = np.array(payload["scale_mean"])
        scaler.scale_ = np.array(payload["scale_std"])
        scaler.constant_ = scaler.scale_ == 0.0
        scaler.n_features_in_ = n_cont
        builder.scaler_ = scaler
        return builder


def pooled_maps(dataset):
    """Average-pooled vectors for the dataset's embedding matrices."""
    video = (
        pool_embeddings(dataset.video_embeddings)
        if dataset.video_embeddings is not None
        else None
    )
    text = (
        pool_embeddings(dataset.text_embeddings)
        if dataset.text_embeddings is not None
        else None
    )
    return video, text
