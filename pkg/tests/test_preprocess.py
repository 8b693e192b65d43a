import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videopop import (
    ColumnStats,
    DataError,
    IqrWinsorizer,
    PopulationScaler,
    filter_label_outliers,
    iqr_bounds,
    log1p_transform,
)

from conftest import make_post, make_user
from videopop.dataset import LabeledExample


def labeled(value):
    return LabeledExample(post=make_post(), user=make_user(), label=float(value))


class TestLog1p:
    def test_zero(self):
        assert log1p_transform(0) == 0.0

    def test_e_minus_one(self):
        assert log1p_transform(math.e - 1) == pytest.approx(1.0, abs=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            log1p_transform(-3)

    def test_vectorized(self):
        np.testing.assert_allclose(log1p_transform([0.0, math.e - 1]), [0.0, 1.0])


class TestIqrBounds:
    def test_interpolated_quartiles(self):
        bounds = iqr_bounds([1, 2, 3, 4, 5, 6, 7, 8])
        assert bounds.q1 == pytest.approx(2.75)
        assert bounds.q3 == pytest.approx(6.25)
        assert bounds.iqr == pytest.approx(3.5)
        assert bounds.lower == pytest.approx(-2.5)
        assert bounds.upper == pytest.approx(11.5)

    def test_constant_sample(self):
        bounds = iqr_bounds([5, 5, 5, 5])
        assert bounds.q1 == bounds.q3 == 5
        assert bounds.iqr == 0
        assert (bounds.lower, bounds.upper) == (5, 5)

    def test_outlier_outside_fence(self):
        bounds = iqr_bounds([0, 0, 0, 100])
        assert bounds.q1 == pytest.approx(0.0)
        assert bounds.q3 == pytest.approx(25.0)
        assert bounds.lower == pytest.approx(-37.5)
        assert bounds.upper == pytest.approx(62.5)
        assert not bounds.contains(100)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            iqr_bounds([])

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            iqr_bounds([1.0, np.nan])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.randoms())
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, values, rnd):
        shuffled = list(values)
        rnd.shuffle(shuffled)
        assert iqr_bounds(values) == iqr_bounds(shuffled)


class TestFilterLabelOutliers:
    def test_drops_extreme_label(self):
        examples = [labeled(v) for v in range(1, 9)] + [labeled(50)]
        kept, dropped, bounds = filter_label_outliers(examples)
        assert len(kept) == 8
        assert len(dropped) == 1
        assert dropped[0].label == 50

    def test_constant_labels_keep_everything(self):
        examples = [labeled(2.0) for _ in range(6)]
        kept, dropped, _ = filter_label_outliers(examples)
        assert len(kept) == 6 and not dropped

    def test_idempotent_under_fixed_bounds(self):
        examples = [labeled(v) for v in range(1, 9)] + [labeled(50)]
        kept, _, bounds = filter_label_outliers(examples)
        again, dropped, _ = filter_label_outliers(kept, bounds=bounds)
        assert again == kept and not dropped

    def test_requires_four_examples(self):
        with pytest.raises(DataError):
            filter_label_outliers([labeled(1.0)] * 3)

    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_strict_partition(self, values):
        examples = [labeled(v) for v in values]
        kept, dropped, bounds = filter_label_outliers(examples)
        assert len(kept) + len(dropped) == len(examples)
        assert all(bounds.contains(ex.label) for ex in kept)
        assert all(not bounds.contains(ex.label) for ex in dropped)


class TestIqrWinsorizer:
    def test_clipping_contract(self):
        train = np.array([[0.0], [0.0], [0.0], [100.0]])
        winsorizer = IqrWinsorizer().fit(train)
        out = winsorizer.transform(np.array([[-50.0], [10.0], [100.0]]))
        np.testing.assert_allclose(out[:, 0], [-37.5, 10.0, 62.5])

    def test_inside_bounds_unchanged(self):
        train = np.array([[1.0], [2.0], [3.0], [4.0]])
        winsorizer = IqrWinsorizer().fit(train)
        np.testing.assert_array_equal(
            winsorizer.transform(np.array([[2.5]])), np.array([[2.5]])
        )

    def test_column_mismatch_rejected(self):
        winsorizer = IqrWinsorizer().fit(np.ones((4, 2)))
        with pytest.raises(ValueError, match="columns"):
            winsorizer.transform(np.ones((2, 3)))

    @given(
        st.lists(
            st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
            min_size=2,
            max_size=30,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_output_within_bounds(self, rows):
        train = np.array(rows)
        winsorizer = IqrWinsorizer().fit(train)
        out = winsorizer.transform(train * 3.0)
        assert np.all(out >= winsorizer.lower_ - 1e-12)
        assert np.all(out <= winsorizer.upper_ + 1e-12)


class TestPopulationScaler:
    def test_two_point_column(self):
        scaler = PopulationScaler().fit(np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(
            scaler.transform(np.array([[1.0], [3.0]]))[:, 0], [-1.0, 1.0]
        )

    def test_constant_column_maps_to_zero(self):
        scaler = PopulationScaler().fit(np.full((5, 1), 7.0))
        out = scaler.transform(np.array([[7.0], [9.0]]))
        np.testing.assert_array_equal(out, np.zeros((2, 1)))

    def test_round_trip_inverse(self, rng):
        train = rng.normal(size=(20, 3)) * [1.0, 5.0, 0.0] + [0.0, 2.0, 4.0]
        scaler = PopulationScaler().fit(train)
        recovered = scaler.inverse_transform(scaler.transform(train))
        np.testing.assert_allclose(recovered, train, atol=1e-12)

    def test_column_mismatch_rejected(self):
        scaler = PopulationScaler().fit(np.ones((3, 2)))
        with pytest.raises(ValueError, match="columns"):
            scaler.transform(np.ones((3, 4)))


class TestColumnStats:
    def test_json_round_trip(self):
        stats = ColumnStats(
            continuous_names=["a", "b"],
            medians=np.array([1.0, 2.0]),
            lower=np.array([-1.0, 0.0]),
            upper=np.array([3.0, 4.0]),
            means=np.array([1.0, 2.0]),
            stds=np.array([0.5, 0.0]),
            categorical_vocab={"cat": {"x", "y"}},
        )
        recovered = ColumnStats.from_dict(stats.to_dict())
        assert recovered.continuous_names == ["a", "b"]
        np.testing.assert_array_equal(recovered.stds, stats.stds)
        assert recovered.categorical_vocab == {"cat": {"x", "y"}}
        assert list(recovered.constant) == [False, True]
