import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from videopop import (
    DataError,
    EmbeddingMatrix,
    FormatError,
    compute_label,
    join,
    load_embeddings,
    load_posts,
    load_users,
    save_embeddings,
    save_embeddings_csv,
)
from videopop.dataset import fnv1a64, sidecar_path

from conftest import make_post, make_user

POSTS_HEADER = (
    "post_id,user_id,raw_views,days_since_publish,post_timestamp,category,"
    "language,location,video_format,music_id,duration_s,width_px,height_px,"
    "caption,suggested_keywords,tags"
)

USERS_HEADER = (
    "user_id,follower_count,following_count,video_count,like_count,"
    "digg_count,heart_count,friend_count,historical_mean_popularity"
)


def write_posts_csv(path, rows):
    path.write_text(POSTS_HEADER + "\n" + "\n".join(rows) + "\n")


def write_users_csv(path, rows):
    path.write_text(USERS_HEADER + "\n" + "\n".join(rows) + "\n")


class TestComputeLabel:
    def test_doubling_rate(self):
        assert compute_label(20, 10) == 2.0

    def test_unit_rate(self):
        assert compute_label(10, 10) == 1.0

    def test_high_rate(self):
        # log2(100) + 1, evaluated with an arbitrary-precision calculator
        assert compute_label(1000, 10) == pytest.approx(7.643856189774725, abs=1e-12)

    def test_zero_views_guarded(self):
        # epsilon = 0.5 views keeps the label finite
        assert compute_label(0, 1) == math.log2(0.5) + 1.0

    def test_non_positive_days_rejected(self):
        with pytest.raises(DataError, match="non-positive days_since_publish"):
            compute_label(10, 0)
        with pytest.raises(DataError):
            compute_label(10, -1)

    def test_negative_views_rejected(self):
        with pytest.raises(DataError):
            compute_label(-1, 1)

    @given(
        r1=st.integers(min_value=1, max_value=10**9),
        r2=st.integers(min_value=1, max_value=10**9),
        d=st.floats(min_value=0.01, max_value=1000, allow_nan=False),
    )
    def test_monotone_in_views(self, r1, r2, d):
        if r1 == r2:
            return
        lo, hi = sorted((r1, r2))
        assert compute_label(lo, d) < compute_label(hi, d)

    @given(
        r=st.integers(min_value=1, max_value=10**6),
        d=st.floats(min_value=0.01, max_value=1000),
        c=st.floats(min_value=0.01, max_value=1000),
    )
    def test_ratio_invariance(self, r, d, c):
        # Holds wherever the zero-view epsilon guard is inactive on both sides.
        assume(r * c >= 0.5)
        assert compute_label(r, d) == pytest.approx(
            compute_label(r * c, d * c), abs=1e-12
        )


class TestLoadPosts:
    def test_valid_rows_round_trip(self, tmp_path):
        path = tmp_path / "posts.csv"
        write_posts_csv(
            path,
            [
                "p1,u1,100,10,1650000000,cat,en,nyc,vertical,m1,30,1080,1920,hello,a;b,t1;t2",
                "p2,u1,0,5,1650000100,,,,,,,,,,,",
                "p3,u2,7,2.5,1650000200,cat,en,,square,,12.5,720,720,cap,,x",
            ],
        )
        posts = load_posts(path)
        assert [p.post_id for p in posts] == ["p1", "p2", "p3"]
        assert posts[0].tags == ("t1", "t2")
        assert posts[0].suggested_keywords == ("a", "b")
        assert posts[1].category is None
        assert posts[1].duration_s is None
        assert posts[1].caption == ""
        assert posts[2].tags == ("x",)

    def test_zero_days_rejected(self, tmp_path):
        path = tmp_path / "posts.csv"
        write_posts_csv(path, ["p1,u1,100,0,1650000000,,,,,,,,,,,"])
        with pytest.raises(DataError, match="non-positive days_since_publish"):
            load_posts(path)

    def test_duplicate_post_id_rejected(self, tmp_path):
        path = tmp_path / "posts.csv"
        write_posts_csv(
            path,
            [
                "p1,u1,1,1,1650000000,,,,,,,,,,,",
                "p1,u2,2,1,1650000000,,,,,,,,,,,",
            ],
        )
        with pytest.raises(DataError, match="duplicate post_id 'p1'"):
            load_posts(path)

    def test_malformed_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "posts.csv"
        write_posts_csv(
            path,
            [
                "p1,u1,1,1,1650000000,,,,,,,,,,,",
                "p2,u1,oops,1,1650000000,,,,,,,,,,,",
            ],
        )
        with pytest.raises(DataError, match=r"row 2, column 'raw_views'"):
            load_posts(path)

    def test_unknown_column_warns_but_loads(self, tmp_path):
        path = tmp_path / "posts.csv"
        path.write_text(
            POSTS_HEADER + ",mystery\n"
            "p1,u1,1,1,1650000000,,,,,,,,,,,,extra\n"
        )
        with pytest.warns(UserWarning, match="mystery"):
            posts = load_posts(path)
        assert len(posts) == 1

    def test_json_equivalent(self, tmp_path):
        path = tmp_path / "posts.json"
        path.write_text(
            json.dumps(
                [
                    {
                        "post_id": "p1",
                        "user_id": "u1",
                        "raw_views": 4,
                        "days_since_publish": 2.0,
                        "post_timestamp": 1650000000,
                        "tags": ["t1", "t2"],
                    }
                ]
            )
        )
        posts = load_posts(path)
        assert posts[0].tags == ("t1", "t2")
        assert posts[0].category is None


class TestLoadUsers:
    def test_valid_rows(self, tmp_path):
        path = tmp_path / "users.csv"
        write_users_csv(path, ["u1,10,5,3,100,4,50,2,4.5", "u2,0,0,0,0,0,0,0,"])
        users = load_users(path)
        assert len(users) == 2
        assert users[0].follower_count == 10
        assert users[1].historical_mean_popularity is None

    def test_negative_count_rejected(self, tmp_path):
        path = tmp_path / "users.csv"
        write_users_csv(path, ["u1,-1,5,3,100,4,50,2,"])
        with pytest.raises(DataError, match="column 'follower_count'"):
            load_users(path)

    def test_missing_cell_recorded_missing(self, tmp_path):
        path = tmp_path / "users.csv"
        write_users_csv(path, ["u1,10,5,3,100,4,,2,"])
        users = load_users(path)
        assert users[0].heart_count is None

    def test_duplicate_user_id_rejected(self, tmp_path):
        path = tmp_path / "users.csv"
        write_users_csv(path, ["u1,1,1,1,1,1,1,1,", "u1,2,2,2,2,2,2,2,"])
        with pytest.raises(DataError, match="duplicate user_id"):
            load_users(path)


class TestEmbeddingIO:
    def test_binary_round_trip(self, tmp_path):
        values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
        matrix = EmbeddingMatrix("video_frames", ["a", "b"], values.astype(np.float64))
        path = tmp_path / "m.emb"
        save_embeddings(matrix, path)
        loaded = load_embeddings(path)
        assert loaded.ids == ["a", "b"]
        np.testing.assert_array_equal(loaded.values, matrix.values)

    def test_csv_and_binary_agree(self, tmp_path, rng):
        values = rng.normal(size=(5, 4)).astype(np.float32).astype(np.float64)
        matrix = EmbeddingMatrix("video_frames", ["a", "a", "b", "c", "c"], values)
        binary = tmp_path / "m.emb"
        textual = tmp_path / "m.csv"
        save_embeddings(matrix, binary)
        save_embeddings_csv(matrix, textual)
        from_binary = load_embeddings(binary)
        from_csv = load_embeddings(textual)
        assert from_binary.ids == from_csv.ids
        np.testing.assert_array_equal(from_binary.values, from_csv.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.emb"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError, match="bad magic"):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        values = np.ones((4, 3), dtype=np.float64)
        matrix = EmbeddingMatrix("video_frames", list("abcd"), values)
        path = tmp_path / "m.emb"
        save_embeddings(matrix, path)
        raw = path.read_bytes()
        # header claims 5 rows but the payload still holds 4
        path.write_bytes(raw[:8] + (5).to_bytes(4, "little") + raw[12:])
        with pytest.raises(FormatError, match="truncated"):
            load_embeddings(path)

    def test_missing_sidecar(self, tmp_path):
        values = np.ones((1, 2), dtype=np.float64)
        matrix = EmbeddingMatrix("video_frames", ["a"], values)
        path = tmp_path / "m.emb"
        save_embeddings(matrix, path)
        (tmp_path / sidecar_path("m.emb")).unlink()
        with pytest.raises(FormatError, match="sidecar"):
            load_embeddings(path)

    def test_non_finite_csv_value_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("post_id,e0,e1\na,1.0,nan\n")
        with pytest.raises(DataError, match="non-finite"):
            load_embeddings(path)

    def test_non_finite_constructor_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            EmbeddingMatrix("video_frames", ["a"], np.array([[np.inf, 1.0]]))

    def test_fnv1a64_reference_values(self):
        # Published FNV-1a test vectors
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C

    @settings(max_examples=25, deadline=None)
    @given(
        data=st.lists(
            st.lists(
                st.floats(
                    min_value=-1e6, max_value=1e6, allow_nan=False, width=32
                ),
                min_size=3,
                max_size=3,
            ),
            min_size=1,
            max_size=8,
        )
    )
    def test_round_trip_property(self, tmp_path_factory, data):
        tmp = tmp_path_factory.mktemp("emb")
        ids = [f"post{i // 2}" for i in range(len(data))]
        matrix = EmbeddingMatrix(
            "video_frames",
            ids,
            np.array(data, dtype=np.float32).astype(np.float64),
        )
        binary = tmp / "m.emb"
        textual = tmp / "m.csv"
        save_embeddings(matrix, binary)
        save_embeddings_csv(matrix, textual)
        for loaded in (load_embeddings(binary), load_embeddings(textual)):
            assert loaded.ids == ids
            np.testing.assert_array_equal(loaded.values, matrix.values)


class TestJoin:
    def test_matching_users(self):
        posts = [make_post("p1"), make_post("p2", user_id="u2")]
        users = [make_user("u1"), make_user("u2")]
        dataset = join(posts, users)
        assert len(dataset.examples) == 2
        assert dataset.missing_user_count == 0
        assert dataset.examples[0].label == compute_label(100, 10.0)

    def test_lenient_missing_user(self):
        posts = [make_post("p1", user_id="ghost")]
        dataset = join(posts, [make_user("u1")])
        assert dataset.missing_user_count == 1
        example = dataset.examples[0]
        assert example.user_missing
        assert example.user.follower_count is None

    def test_strict_missing_embedding(self):
        posts = [make_post("p7")]
        users = [make_user("u1")]
        embeddings = EmbeddingMatrix("video_frames", ["other"], np.ones((1, 3)))
        with pytest.raises(DataError, match="p7"):
            join(posts, users, embeddings, strict=True)

    def test_lenient_missing_embedding_counted(self):
        posts = [make_post("p7"), make_post("p8")]
        users = [make_user("u1")]
        embeddings = EmbeddingMatrix("video_frames", ["p8"], np.ones((1, 3)))
        dataset = join(posts, users, embeddings, strict=False)
        assert dataset.missing_video_embedding_count == 1
        assert len(dataset.examples) == 2

    @given(n_posts=st.integers(min_value=0, max_value=30))
    @settings(max_examples=20, deadline=None)
    def test_never_drops_posts(self, n_posts):
        posts = [make_post(f"p{i}", user_id=f"u{i % 3}") for i in range(n_posts)]
        users = [make_user("u0")]
        dataset = join(posts, users)
        assert len(dataset.examples) == n_posts

    def test_zero_view_flagged(self):
        dataset = join([make_post("p1", raw_views=0)], [make_user("u1")])
        assert dataset.examples[0].zero_view_guard
