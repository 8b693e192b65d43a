"""Dataset ingestion: post/user tables, frame-embedding matrices, labels, joining.

All loaders are strict about the documented schemas (column names are
case-sensitive) and report the offending row and column on failure. Loaded
records are immutable, so a dataset can be shared freely across threads.
"""

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

# The label formula is undefined at zero views; half a view keeps it finite
# while preserving the ordering against one-view posts.
ZERO_VIEW_EPSILON = 0.5

POST_COLUMNS = (
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
)

USER_COLUMNS = (
    "user_id",
    "follower_count",
    "following_count",
    "video_count",
    "like_count",
    "digg_count",
    "heart_count",
    "friend_count",
    "historical_mean_popularity",
)

USER_COUNT_FIELDS = (
    "follower_count",
    "following_count",
    "video_count",
    "like_count",
    "digg_count",
    "heart_count",
    "friend_count",
)

LIST_DELIMITER = ";"

EMBEDDING_MAGIC = b"EMB1"
EMBEDDING_VERSION = 1
SIDECAR_SUFFIX = ".ids.csv"


@dataclass(frozen=True)
class PostRecord:
    """One social post. Optional metadata is ``None`` when absent."""

    post_id: str
    user_id: str
    raw_views: int
    days_since_publish: float
    post_timestamp: int
    category: str | None = None
    language: str | None = None
    location: str | None = None
    video_format: str | None = None
    music_id: str | None = None
    duration_s: float | None = None
    width_px: int | None = None
    height_px: int | None = None
    caption: str = ""
    suggested_keywords: tuple = ()
    tags: tuple = ()


@dataclass(frozen=True)
class UserProfile:
    """Aggregate account statistics for one user; counts may be missing."""

    user_id: str
    follower_count: int | None = None
    following_count: int | None = None
    video_count: int | None = None
    like_count: int | None = None
    digg_count: int | None = None
    heart_count: int | None = None
    friend_count: int | None = None
    historical_mean_popularity: float | None = None


@dataclass(frozen=True)
class LabeledExample:
    """A post joined with its author and the normalized popularity label."""

    post: PostRecord
    user: UserProfile
    label: float
    zero_view_guard: bool = False
    user_missing: bool = False


class EmbeddingMatrix:
    """Row-major embedding matrix with one post id per row.

    For ``kind="video_frames"`` a post's frames are its rows in file order
    (repeated ids form the frame sequence); for ``kind="text"`` each post
    normally has a single row.
    """

    def __init__(self, kind, ids, values):
        if kind not in ("video_frames", "text"):
            raise ValueError(f"unknown embedding kind {kind!r}")
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(
                f"embedding matrix must be 2-D and non-empty, got shape {values.shape}"
            )
        if len(ids) != values.shape[0]:
            raise DataError(
                f"row count {values.shape[0]} does not match id count {len(ids)}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("embedding matrix contains non-finite values")
        self.kind = kind
        self.ids = list(ids)
        self.values = values
        self._row_groups = {}
        for row, post_id in enumerate(self.ids):
            self._row_groups.setdefault(post_id, []).append(row)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    def post_ids(self):
        """Distinct post ids in order of first appearance."""
        return list(self._row_groups)

    def has_post(self, post_id):
        return post_id in self._row_groups

    def frames_for(self, post_id):
        """All rows belonging to ``post_id``, in file order."""
        try:
            rows = self._row_groups[post_id]
        except KeyError:
            raise KeyError(f"no embedding rows for post {post_id!r}") from None
        return self.values[rows]


@dataclass
class Dataset:
    """Joined view over posts, users, and embedding matrices."""

    examples: list
    video_embeddings: EmbeddingMatrix | None = None
    text_embeddings: EmbeddingMatrix | None = None
    missing_user_count: int = 0
    missing_video_embedding_count: int = 0

    def __len__(self):
        return len(self.examples)

    def labels(self):
        return np.array([ex.label for ex in self.examples], dtype=np.float64)


def compute_label(raw_views, days_since_publish):
    """Normalized popularity: log2 of the daily view rate, shifted by one.

    Zero views are replaced by ``ZERO_VIEW_EPSILON`` so the logarithm stays
    finite; callers can flag such rows via ``raw_views == 0``.
    """
    if days_since_publish <= 0:
        raise DataError("non-positive days_since_publish")
    if raw_views < 0:
        raise DataError("negative raw_views")
    guarded = max(float(raw_views), ZERO_VIEW_EPSILON)
    return math.log2(guarded / days_since_publish) + 1.0


# ---------------------------------------------------------------------------
# CSV / JSON table loading
# ---------------------------------------------------------------------------


def _infer_format(path, format):
    if format is not None:
        if format not in ("csv", "json"):
            raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
        return format
    return "json" if str(path).endswith(".json") else "csv"


def _iter_rows(path, format, required_columns):
    """Yield (row_number, dict) pairs; row numbers are 1-based data rows."""
    if format == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required_columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            extra = [c for c in header if c not in required_columns]
            if extra:
                warnings.warn(f"{path}: ignoring unknown columns {extra}")
            for number, row in enumerate(reader, start=1):
                yield number, {k: row.get(k) for k in required_columns}
    else:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
        if not isinstance(records, list):
            raise DataError(f"{path}: JSON input must be a list of objects")
        known = set(required_columns)
        for number, record in enumerate(records, start=1):
            if not isinstance(record, dict):
                raise DataError(f"{path} row {number}: expected an object")
            extra = [k for k in record if k not in known]
            if extra:
                warnings.warn(f"{path}: ignoring unknown keys {extra}")
            yield number, {k: record.get(k) for k in required_columns}


def _cell_missing(value):
    if value is None:
        return True
    return isinstance(value, str) and value.strip() == ""


def _parse_int(value, path, row, column, minimum=None):
    try:
        if isinstance(value, bool):
            raise ValueError
        parsed = int(value)
    except (TypeError, ValueError):
        raise DataError(
            f"{path} row {row}, column '{column}': not an integer ({value!r})"
        ) from None
    if minimum is not None and parsed < minimum:
        raise DataError(
            f"{path} row {row}, column '{column}': value {parsed} below minimum {minimum}"
        )
    return parsed


def _parse_float(value, path, row, column):
    try:
        parsed = float(value)
    except (TypeError, ValueError):
        raise DataError(
            f"{path} row {row}, column '{column}': not a number ({value!r})"
        ) from None
    if not math.isfinite(parsed):
        raise DataError(f"{path} row {row}, column '{column}': non-finite value")
    return parsed


def _parse_list(value):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value if str(v) != "")
    return tuple(part for part in str(value).split(LIST_DELIMITER) if part != "")


def load_posts(path, format=None):
    """Load ``posts.csv`` (or the JSON equivalent) into PostRecords."""
    format = _infer_format(path, format)
    posts = []
    seen = set()
    for row, cells in _iter_rows(path, format, POST_COLUMNS):
        post_id = cells["post_id"]
        if _cell_missing(post_id):
            raise DataError(f"{path} row {row}, column 'post_id': empty")
        post_id = str(post_id)
        if post_id in seen:
            raise DataError(f"{path} row {row}: duplicate post_id {post_id!r}")
        seen.add(post_id)
        if _cell_missing(cells["user_id"]):
            raise DataError(f"{path} row {row}, column 'user_id': empty")
        days = _parse_float(cells["days_since_publish"], path, row, "days_since_publish")
        if days <= 0:
            raise DataError(
                f"{path} row {row}, column 'days_since_publish': "
                "non-positive days_since_publish"
            )
        duration = None
        if not _cell_missing(cells["duration_s"]):
            duration = _parse_float(cells["duration_s"], path, row, "duration_s")
            if duration < 0:
                raise DataError(
                    f"{path} row {row}, column 'duration_s': negative duration"
                )
        width = height = None
        if not _cell_missing(cells["width_px"]):
            width = _parse_int(cells["width_px"], path, row, "width_px", minimum=1)
        if not _cell_missing(cells["height_px"]):
            height = _parse_int(cells["height_px"], path, row, "height_px", minimum=1)

        def optional_str(column):
            return None if _cell_missing(cells[column]) else str(cells[column])

        posts.append(
            PostRecord(
                post_id=post_id,
                user_id=str(cells["user_id"]),
                raw_views=_parse_int(cells["raw_views"], path, row, "raw_views", minimum=0),
                days_since_publish=days,
                post_timestamp=_parse_int(
                    cells["post_timestamp"], path, row, "post_timestamp", minimum=0
                ),
                category=optional_str("category"),
                language=optional_str("language"),
                location=optional_str("location"),
                video_format=optional_str("video_format"),
                music_id=optional_str("music_id"),
                duration_s=duration,
                width_px=width,
                height_px=height,
                caption="" if _cell_missing(cells["caption"]) else str(cells["caption"]),
                suggested_keywords=_parse_list(cells["suggested_keywords"]),
                tags=_parse_list(cells["tags"]),
            )
        )
    return posts


def load_users(path, format=None):
    """Load ``users.csv`` (or the JSON equivalent) into UserProfiles."""
    format = _infer_format(path, format)
    users = []
    seen = set()
    for row, cells in _iter_rows(path, format, USER_COLUMNS):
        user_id = cells["user_id"]
        if _cell_missing(user_id):
            raise DataError(f"{path} row {row}, column 'user_id': empty")
        user_id = str(user_id)
        if user_id in seen:
            raise DataError(f"{path} row {row}: duplicate user_id {user_id!r}")
        seen.add(user_id)
        counts = {}
        for column in USER_COUNT_FIELDS:
            if _cell_missing(cells[column]):
                counts[column] = None
            else:
                counts[column] = _parse_int(cells[column], path, row, column, minimum=0)
        history = None
        if not _cell_missing(cells["historical_mean_popularity"]):
            history = _parse_float(
                cells["historical_mean_popularity"], path, row, "historical_mean_popularity"
            )
        users.append(UserProfile(user_id=user_id, historical_mean_popularity=history, **counts))
    return users


# ---------------------------------------------------------------------------
# Embedding matrix I/O
# ---------------------------------------------------------------------------


def fnv1a64(text):
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    value = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        value ^= byte
        value = (value * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return value


def sidecar_path(path):
    return str(path) + SIDECAR_SUFFIX


def save_embeddings(matrix, path):
    """Write the binary embedding format plus the id-hash sidecar CSV.

    Values are stored as little-endian float32; callers that need bit-exact
    round trips should supply float32-representable data.
    """
    values = np.asarray(matrix.values, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<B3x", EMBEDDING_VERSION))
        fh.write(struct.pack("<II", matrix.rows, matrix.cols))
        hashes = np.array([fnv1a64(i) for i in matrix.ids], dtype=np.uint64)
        fh.write(hashes.astype("<u8").tobytes())
        fh.write(values.astype("<f4").tobytes())
    with open(sidecar_path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id_hash", "post_id"])
        written = set()
        for post_id in matrix.ids:
            if post_id not in written:
                writer.writerow([fnv1a64(post_id), post_id])
                written.add(post_id)


def save_embeddings_csv(matrix, path):
    """Write the equivalent CSV embedding format (one row per frame)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["post_id"] + [f"e{i}" for i in range(matrix.cols)])
        for post_id, row in zip(matrix.ids, matrix.values):
            writer.writerow([post_id] + [repr(float(v)) for v in row])


def _load_embeddings_binary(path, kind):
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {payload[:4]!r}, expected {EMBEDDING_MAGIC!r}")
    if len(payload) < 16:
        raise FormatError(f"{path}: truncated header")
    version = payload[4]
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rows, cols = struct.unpack_from("<II", payload, 8)
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: header claims empty matrix ({rows}x{cols})")
    expected = 16 + 8 * rows + 4 * rows * cols
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload; header claims rows={rows} cols={cols} "
            f"({expected} bytes) but file has {len(payload)}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    hashes = np.frombuffer(payload, dtype="<u8", count=rows, offset=16)
    values = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=16 + 8 * rows)
    values = values.astype(np.float64).reshape(rows, cols)

    sidecar = sidecar_path(path)
    try:
        with open(sidecar, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["id_hash", "post_id"]:
                raise FormatError(f"{sidecar}: expected columns id_hash,post_id")
            mapping = {}
            for row in reader:
                mapping[int(row["id_hash"])] = row["post_id"]
    except FileNotFoundError:
        raise FormatError(
            f"{path}: id sidecar {sidecar} not found; it is required to map "
            "row hashes back to post ids"
        ) from None
    ids = []
    for hash_value in hashes:
        hash_value = int(hash_value)
        if hash_value not in mapping:
            raise FormatError(f"{path}: id-hash {hash_value} missing from sidecar")
        post_id = mapping[hash_value]
        if fnv1a64(post_id) != hash_value:
            raise FormatError(
                f"{sidecar}: post_id {post_id!r} does not hash to {hash_value}"
            )
        ids.append(post_id)
    return EmbeddingMatrix(kind, ids, values)


def _load_embeddings_csv(path, kind):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "post_id":
            raise FormatError(f"{path}: first column must be post_id")
        cols = len(header) - 1
        if cols < 1:
            raise FormatError(f"{path}: no embedding columns")
        ids = []
        rows = []
        for number, row in enumerate(reader, start=1):
            if len(row) != cols + 1:
                raise DataError(
                    f"{path} row {number}: expected {cols + 1} cells, got {len(row)}"
                )
            ids.append(row[0])
            try:
                parsed = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path} row {number}: non-numeric embedding value") from None
            if not all(math.isfinite(v) for v in parsed):
                raise DataError(f"{path} row {number}: non-finite embedding value")
            rows.append(parsed)
    if not rows:
        raise FormatError(f"{path}: no embedding rows")
    return EmbeddingMatrix(kind, ids, np.array(rows, dtype=np.float64))


def load_embeddings(path, kind="video_frames"):
    """Load an embedding matrix, sniffing binary vs CSV by the leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] == EMBEDDING_MAGIC:
        return _load_embeddings_binary(path, kind)
    if head.startswith(b"post_id"):
        return _load_embeddings_csv(path, kind)
    raise FormatError(
        f"{path}: bad magic {head[:4]!r}; expected {EMBEDDING_MAGIC!r} binary "
        "or a CSV starting with a post_id header"
    )


# ---------------------------------------------------------------------------
# Joining
# ---------------------------------------------------------------------------


def join(posts, users, video_embeddings=None, text_embeddings=None, strict=False):
    """Pair every post with its author profile and compute labels.

    Lenient mode (default) substitutes an all-missing profile for unknown
    users and counts posts without video-frame rows instead of failing;
    strict mode raises on a missing video embedding. No post is ever
    dropped silently.
    """
    profile_of = {u.user_id: u for u in users}
    examples = []
    missing_users = 0
    missing_embeddings = 0
    for post in posts:
        user = profile_of.get(post.user_id)
        user_missing = user is None
        if user_missing:
            user = UserProfile(user_id=post.user_id)
            missing_users += 1
        if video_embeddings is not None and not video_embeddings.has_post(post.post_id):
            if strict:
                raise DataError(
                    f"post {post.post_id!r} has no video embedding rows (strict mode)"
                )
            missing_embeddings += 1
        examples.append(
            LabeledExample(
                post=post,
                user=user,
                label=compute_label(post.raw_views, post.days_since_publish),
                zero_view_guard=post.raw_views == 0,
                user_missing=user_missing,
            )
        )
    return Dataset(
        examples=examples,
        video_embeddings=video_embeddings,
        text_embeddings=text_embeddings,
        missing_user_count=missing_users,
        missing_video_embedding_count=missing_embeddings,
    )


def load_dataset(posts_path, users_path, video_embeddings_path=None,
                 text_embeddings_path=None, strict=False):
    """Convenience loader: read all tables and join them."""
    posts = load_posts(posts_path)
    users = load_users(users_path)
    video = None
    if video_embeddings_path is not None:
        video = load_embeddings(video_embeddings_path, kind="video_frames")
    text = None
    if text_embeddings_path is not None:
        text = load_embeddings(text_embeddings_path, kind="text")
    return join(posts, users, video, text, strict=strict)
