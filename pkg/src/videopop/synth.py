"""Seeded synthetic dataset generator with planted, group-attributable signal.

Mirrors the target data shape (6,000 posts from 4,500 users across 120
categories, long-tailed per-user activity) without any real platform data.
Each feature group carries an independently weighted signal component, so
ablation tests can verify that removing a group degrades accuracy in
proportion to its planted weight.

Views are reconstructed from the target label: the generator drafts a label,
rounds ``d * 2^(label-1)`` to an integer view count, and then recomputes the
stored label from that count, so the label formula inverts exactly on every
generated post.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    EmbeddingMatrix,
    PostRecord,
    UserProfile,
    compute_label,
    join,
    save_embeddings,
)
from .errors import ConfigError
from .preprocess import iqr_bounds

# Fixed 2022-04-15T00:00:00Z collection window start; posts span 24 months.
WINDOW_START = 1_650_000_000
WINDOW_DAYS = 730

_CAPTION_VOCAB = (
    "amazing day trip beach city sunset friends food recipe dance music "
    "tutorial funny cat dog travel vlog style outfit review game highlights "
    "workout fitness diy craft art paint draw sing cover live show behind "
    "scenes morning night coffee tea winter summer spring fall family party "
    "birthday wedding concert festival street market ocean mountain lake "
    "forest garden home room tour haul unboxing challenge prank storytime"
).split()


@dataclass
class SynthConfig:
    """Knobs for the generator; defaults mirror the reference data shape."""

    n_posts: int = 6000
    n_users: int = 4500
    n_categories: int = 120
    n_tags: int = 40000
    embedding_dim: int = 256
    frame_count_min: int = 4
    frame_count_max: int = 16
    user_weight: float = 1.6
    visual_weight: float = 0.7
    tag_weight: float = 0.5
    temporal_weight: float = 0.3
    metadata_weight: float = 0.3
    noise_std: float = 0.35
    # keeps the label distribution positive and unimodal (peak ~5-10), so
    # MAPE denominators stay well away from the near-zero guard
    intercept: float = 6.5
    # minimum feed exposure: every post collects at least this many views per
    # day, which bounds labels below by log2(rate)+1 (0 disables the floor)
    exposure_floor_rate: float = 3.0
    extreme_label_fraction: float = 0.0
    extreme_label_shift: float = 20.0
    powerlaw_exponent: float = 1.8
    max_posts_per_user: int = 200
    history_missing_fraction: float = 0.25
    seed: int = 42

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, payload):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**payload)


@dataclass
class SynthData:
    """In-memory generator output plus the generative log."""

    posts: list
    users: list
    video_embeddings: EmbeddingMatrix
    truth: dict = field(default_factory=dict)

    def dataset(self, strict=False):
        return join(self.posts, self.users, self.video_embeddings, strict=strict)


def _draw_post_counts(config, rng):
    """Power-law per-user counts, adjusted one unit at a time to the exact total."""
    cap = config.max_posts_per_user
    if config.n_posts < config.n_users:
        raise ConfigError(
            f"infeasible: {config.n_posts} posts cannot cover {config.n_users} "
            "users at one post each"
        )
    if config.n_posts > cap * config.n_users:
        raise ConfigError(
            f"infeasible: {config.n_posts} posts exceed the per-user cap of {cap}"
        )
    support = np.arange(1, cap + 1, dtype=np.float64)
    weights = support ** (-config.powerlaw_exponent)
    weights /= weights.sum()
    counts = rng.choice(np.arange(1, cap + 1), size=config.n_users, p=weights)
    delta = config.n_posts - int(counts.sum())
    while delta != 0:
        if delta > 0:
            eligible = np.flatnonzero(counts < cap)
            chosen = rng.permutation(eligible)[: min(delta, eligible.size)]
            counts[chosen] += 1
            delta -= chosen.size
        else:
            eligible = np.flatnonzero(counts > 1)
            chosen = rng.permutation(eligible)[: min(-delta, eligible.size)]
            counts[chosen] -= 1
            delta += chosen.size
    return counts


def _standardize(values):
    values = np.asarray(values, dtype=np.float64)
    std = values.std()
    if std == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def _lognormal_count(rng, base, slope, quality, sigma, size=None):
    noise = rng.normal(0.0, sigma, size=size)
    return np.rint(np.exp(base + slope * quality + noise)).astype(np.int64)


def generate(config=None):
    """Generate a full synthetic dataset; byte-identical for a given seed."""
    if config is None:
        config = SynthConfig()
    rng = np.random.default_rng(config.seed)

    # Users: long-tailed activity, latent quality, counts increasing in quality.
    counts = _draw_post_counts(config, rng)
    quality = rng.normal(0.0, 1.0, size=config.n_users)
    quality_std = _standardize(quality)
    followers = _lognormal_count(rng, 3.0, 1.3, quality_std, 0.5)
    following = _lognormal_count(rng, 4.5, 0.2, quality_std, 0.5)
    videos = _lognormal_count(rng, 2.2, 0.5, quality_std, 0.6)
    likes = _lognormal_count(rng, 5.0, 1.4, quality_std, 0.6)
    diggs = _lognormal_count(rng, 3.5, 1.0, quality_std, 0.7)
    hearts = _lognormal_count(rng, 5.5, 1.3, quality_std, 0.6)
    friends = _lognormal_count(rng, 2.0, 0.6, quality_std, 0.5)
    history = config.intercept + config.user_weight * quality_std + rng.normal(
        0.0, 0.25, size=config.n_users
    )
    history_missing = rng.random(config.n_users) < config.history_missing_fraction
    count_missing = rng.random((config.n_users, 7)) < 0.03

    users = []
    for u in range(config.n_users):
        raw = [followers[u], following[u], videos[u], likes[u], diggs[u], hearts[u], friends[u]]
        cells = [None if count_missing[u, k] else int(raw[k]) for k in range(7)]
        users.append(
            UserProfile(
                user_id=f"user_{u:05d}",
                follower_count=cells[0],
                following_count=cells[1],
                video_count=cells[2],
                like_count=cells[3],
                digg_count=cells[4],
                heart_count=cells[5],
                friend_count=cells[6],
                historical_mean_popularity=(
                    None if history_missing[u] else float(history[u])
                ),
            )
        )

    n = config.n_posts
    author = np.repeat(np.arange(config.n_users), counts)

    # Categorical metadata with skewed (rank-weighted) popularity.
    def ranked_choice(size, vocab_size, exponent):
        weights = np.arange(1, vocab_size + 1, dtype=np.float64) ** (-exponent)
        weights /= weights.sum()
        return rng.choice(vocab_size, size=size, p=weights)

    category_idx = ranked_choice(n, config.n_categories, 1.0)
    language_idx = ranked_choice(n, 12, 1.2)
    location_idx = ranked_choice(n, 40, 1.0)
    format_idx = rng.choice(3, size=n, p=[0.7, 0.2, 0.1])
    music_vocab = min(1000, n)
    music_idx = ranked_choice(n, music_vocab, 1.1)
    music_missing = rng.random(n) < 0.1

    tag_vocab = config.n_tags
    tag_effect_table = rng.normal(0.0, 1.0, size=tag_vocab)
    tag_weights = np.arange(1, tag_vocab + 1, dtype=np.float64) ** (-1.2)
    tag_weights /= tag_weights.sum()
    tags_per_post = []
    tag_effect = np.zeros(n)
    for i in range(n):
        n_tags = int(rng.integers(0, 9))
        if n_tags == 0:
            tags_per_post.append(())
            continue
        chosen = np.unique(rng.choice(tag_vocab, size=n_tags, p=tag_weights))
        tags_per_post.append(tuple(f"tag_{t:05d}" for t in chosen))
        tag_effect[i] = tag_effect_table[chosen].mean()

    timestamps = rng.integers(
        WINDOW_START, WINDOW_START + (WINDOW_DAYS - 1) * 86400, size=n
    )
    collect_time = WINDOW_START + WINDOW_DAYS * 86400
    days = (collect_time - timestamps) / 86400.0

    hours = (timestamps % 86400) // 3600
    hour_effect = np.sin(2.0 * np.pi * (hours - 20.0) / 24.0)

    duration = np.clip(np.exp(rng.normal(math.log(25.0), 0.6, size=n)), 2.0, 300.0)
    duration_effect = -np.abs(np.log(duration / 30.0))

    formats = ("vertical", "horizontal", "square")
    dims = {"vertical": (1080, 1920), "horizontal": (1920, 1080), "square": (1080, 1080)}

    # Frame embeddings: per-post center plus per-frame jitter, float32 values
    # so binary and CSV encodings agree bit-for-bit.
    frame_counts = rng.integers(config.frame_count_min, config.frame_count_max + 1, size=n)
    direction = rng.normal(0.0, 1.0, size=config.embedding_dim)
    direction /= np.linalg.norm(direction)
    embedding_ids = []
    embedding_rows = []
    visual_raw = np.zeros(n)
    post_ids = [f"post_{i:06d}" for i in range(n)]
    for i in range(n):
        center = rng.normal(0.0, 0.8, size=config.embedding_dim)
        frames = center + rng.normal(0.0, 0.3, size=(int(frame_counts[i]), config.embedding_dim))
        frames = frames.astype(np.float32).astype(np.float64)
        pooled = frames.mean(axis=0)
        visual_raw[i] = float(direction @ pooled)
        embedding_ids.extend([post_ids[i]] * int(frame_counts[i]))
        embedding_rows.append(frames)
    video_embeddings = EmbeddingMatrix(
        "video_frames", embedding_ids, np.vstack(embedding_rows)
    )

    captions = []
    keywords = []
    for i in range(n):
        length = int(rng.integers(0, 13))
        words = [
            _CAPTION_VOCAB[int(w)]
            for w in rng.integers(0, len(_CAPTION_VOCAB), size=length)
        ]
        captions.append(" ".join(words))
        n_kw = int(rng.integers(0, 7))
        keywords.append(
            tuple(
                _CAPTION_VOCAB[int(w)]
                for w in rng.integers(0, len(_CAPTION_VOCAB), size=n_kw)
            )
        )

    components = {
        "user": config.user_weight * quality_std[author],
        "visual": config.visual_weight * _standardize(visual_raw),
        "tag": config.tag_weight * _standardize(tag_effect),
        "temporal": config.temporal_weight * _standardize(hour_effect),
        "metadata": config.metadata_weight * _standardize(duration_effect),
    }
    noise = config.noise_std * rng.standard_normal(n)
    target = config.intercept + noise
    for part in components.values():
        target = target + part

    is_extreme = np.zeros(n, dtype=bool)
    if config.extreme_label_fraction > 0:
        n_extreme = int(round(config.extreme_label_fraction * n))
        chosen = rng.choice(n, size=n_extreme, replace=False)
        target[chosen] += config.extreme_label_shift
        is_extreme[chosen] = True

    # Reconstruct integer views from the drafted label (plus the exposure
    # floor), then recompute the stored label from the views so the label
    # formula inverts exactly.
    target = np.clip(target, -20.0, 44.0)
    daily_rate = np.exp2(target - 1.0) + config.exposure_floor_rate
    target = np.log2(daily_rate) + 1.0
    views = np.rint(days * daily_rate).astype(np.int64)
    views = np.maximum(views, 0)

    posts = []
    labels = np.empty(n)
    for i in range(n):
        fmt = formats[format_idx[i]]
        width, height = dims[fmt]
        posts.append(
            PostRecord(
                post_id=post_ids[i],
                user_id=f"user_{author[i]:05d}",
                raw_views=int(views[i]),
                days_since_publish=float(days[i]),
                post_timestamp=int(timestamps[i]),
                category=f"cat_{category_idx[i]:03d}",
                language=f"lang_{language_idx[i]:02d}",
                location=f"loc_{location_idx[i]:02d}",
                video_format=fmt,
                music_id=None if music_missing[i] else f"music_{music_idx[i]:05d}",
                duration_s=float(np.round(duration[i], 2)),
                width_px=width,
                height_px=height,
                caption=captions[i],
                suggested_keywords=keywords[i],
                tags=tags_per_post[i],
            )
        )
        labels[i] = compute_label(int(views[i]), float(days[i]))

    truth = {
        "post_id": post_ids,
        "label": labels,
        "target_label": target,
        "user_component": components["user"],
        "visual_component": components["visual"],
        "tag_component": components["tag"],
        "temporal_component": components["temporal"],
        "metadata_component": components["metadata"],
        "noise": noise,
        "is_extreme": is_extreme,
    }
    return SynthData(posts=posts, users=users, video_embeddings=video_embeddings, truth=truth)


# ---------------------------------------------------------------------------
# File emission (exactly the dataset module's documented formats)
# ---------------------------------------------------------------------------


def _format_optional(value):
    return "" if value is None else value


def write_posts_csv(posts, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "post_id",
                "user_id",
                "raw_views",
                "days_since_publish",
                "post_timestamp",
                "category",
                "language",
                "location",
                "video_format",
                "music_id",
                "duration_s",
                "width_px",
                "height_px",
                "caption",
                "suggested_keywords",
                "tags",
            ]
        )
        for post in posts:
            writer.writerow(
                [
                    post.post_id,
                    post.user_id,
                    post.raw_views,
                    repr(post.days_since_publish),
                    post.post_timestamp,
                    _format_optional(post.category),
                    _format_optional(post.language),
                    _format_optional(post.location),
                    _format_optional(post.video_format),
                    _format_optional(post.music_id),
                    "" if post.duration_s is None else repr(post.duration_s),
                    _format_optional(post.width_px),
                    _format_optional(post.height_px),
                    post.caption,
                    ";".join(post.suggested_keywords),
                    ";".join(post.tags),
                ]
            )


def write_users_csv(users, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "user_id",
                "follower_count",
                "following_count",
                "video_count",
                "like_count",
                "digg_count",
                "heart_count",
                "friend_count",
                "historical_mean_popularity",
            ]
        )
        for user in users:
            writer.writerow(
                [
                    user.user_id,
                    _format_optional(user.follower_count),
                    _format_optional(user.following_count),
                    _format_optional(user.video_count),
                    _format_optional(user.like_count),
                    _format_optional(user.digg_count),
                    _format_optional(user.heart_count),
                    _format_optional(user.friend_count),
                    ""
                    if user.historical_mean_popularity is None
                    else repr(user.historical_mean_popularity),
                ]
            )


def write_truth_csv(truth, path):
    columns = list(truth)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i in range(len(truth["post_id"])):
            row = []
            for column in columns:
                value = truth[column][i]
                if isinstance(value, (float, np.floating)):
                    row.append(repr(float(value)))
                elif isinstance(value, (bool, np.bool_)):
                    row.append(int(value))
                else:
                    row.append(value)
            writer.writerow(row)


def write_dataset(data, out_dir):
    """Emit posts.csv, users.csv, the binary embeddings, and the truth log."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "posts": os.path.join(out_dir, "posts.csv"),
        "users": os.path.join(out_dir, "users.csv"),
        "video_embeddings": os.path.join(out_dir, "video_embeddings.emb"),
        "truth": os.path.join(out_dir, "truth.csv"),
    }
    write_posts_csv(data.posts, paths["posts"])
    write_users_csv(data.users, paths["users"])
    save_embeddings(data.video_embeddings, paths["video_embeddings"])
    write_truth_csv(data.truth, paths["truth"])
    return paths


@dataclass
class SynthSummary:
    """Shape summary for eyeballing the generated data."""

    post_count_histogram: dict
    max_posts_per_user: int
    label_mean: float
    label_std: float
    label_q1: float
    label_median: float
    label_q3: float

    def to_dict(self):
        return {
            "post_count_histogram": self.post_count_histogram,
            "max_posts_per_user": self.max_posts_per_user,
            "label_mean": self.label_mean,
            "label_std": self.label_std,
            "label_q1": self.label_q1,
            "label_median": self.label_median,
            "label_q3": self.label_q3,
        }


def describe(data):
    """Per-user post-count histogram and label moments."""
    per_user = {}
    for post in data.posts:
        per_user[post.user_id] = per_user.get(post.user_id, 0) + 1
    histogram = {}
    for count in per_user.values():
        histogram[count] = histogram.get(count, 0) + 1
    labels = np.array(data.truth["label"], dtype=np.float64)
    bounds = iqr_bounds(labels)
    return SynthSummary(
        post_count_histogram=dict(sorted(histogram.items())),
        max_posts_per_user=max(per_user.values()),
        label_mean=float(labels.mean()),
        label_std=float(labels.std()),
        label_q1=bounds.q1,
        label_median=float(np.median(labels)),
        label_q3=bounds.q3,
    )
