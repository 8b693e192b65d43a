import numpy as np
import pytest

from videopop import PostRecord, UserProfile


def make_post(post_id="p1", user_id="u1", raw_views=100, days=10.0, **overrides):
    defaults = dict(
        post_id=post_id,
        user_id=user_id,
        raw_views=raw_views,
        days_since_publish=days,
        post_timestamp=1_650_000_000,
        category="cat_a",
        language="en",
        location="city",
        video_format="vertical",
        music_id="m1",
        duration_s=30.0,
        width_px=1080,
        height_px=1920,
        caption="a short caption",
        suggested_keywords=("one", "two"),
        tags=("t1", "t2"),
    )
    defaults.update(overrides)
    return PostRecord(**defaults)


def make_user(user_id="u1", **overrides):
    defaults = dict(
        user_id=user_id,
        follower_count=1000,
        following_count=50,
        video_count=20,
        like_count=5000,
        digg_count=100,
        heart_count=4000,
        friend_count=10,
        historical_mean_popularity=5.0,
    )
    defaults.update(overrides)
    return UserProfile(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# The 8-row, 2-feature fixture used by the tree-oracle and boosting tests.
EIGHT_ROW_X = np.array(
    [
        [0.12, 1.40],
        [0.50, 0.30],
        [0.95, 2.10],
        [1.30, 0.70],
        [2.20, 1.90],
        [2.80, 0.10],
        [3.40, 2.60],
        [3.90, 1.10],
    ]
)
EIGHT_ROW_Y = np.array([0.4, 0.6, 0.5, 1.6, 1.4, 1.7, 3.1, 2.9])


@pytest.fixture
def eight_row_fixture():
    return EIGHT_ROW_X.copy(), EIGHT_ROW_Y.copy()
