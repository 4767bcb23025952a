import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mstd_rcnn import data as D
from mstd_rcnn.data import Trend

import oracles

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestDownsample:
    def test_identity_rate(self):
        np.testing.assert_array_equal(D.downsample([5, 7, 9], 1), [5, 7, 9])

    def test_every_second_point(self):
        np.testing.assert_array_equal(D.downsample([1, 2, 3, 4, 5, 6], 2), [2, 4, 6])

    def test_remainder_is_dropped(self):
        x = np.arange(1, 8) * 10.0  # x_1..x_7
        np.testing.assert_array_equal(D.downsample(x, 3), [30.0, 60.0])

    def test_rate_larger_than_sequence(self):
        with pytest.raises(ValueError):
            D.downsample([1, 2], 3)

    @given(st.lists(finite, min_size=1, max_size=60), st.integers(1, 10))
    def test_length_and_values(self, x, d):
        if d > len(x):
            return
        out = D.downsample(x, d)
        assert len(out) == len(x) // d
        assert list(out) == oracles.downsample(x, d)

    @given(st.lists(finite, min_size=1, max_size=40))
    def test_rate_one_is_identity(self, x):
        assert list(D.downsample(x, 1)) == x


class TestDeltaAndLabel:
    def test_delta_values(self):
        assert D.delta(10, 10) == 0
        assert D.delta(3299.7, 3300.0) == pytest.approx(-0.3)

    @given(st.lists(finite, min_size=2, max_size=50))
    def test_deltas_telescope(self, prices):
        assert D.deltas(prices).sum() == pytest.approx(prices[-1] - prices[0], abs=1e-6 * (1 + max(map(abs, prices))))

    def test_label_cases(self):
        assert D.label(0.0, 0.3) is Trend.STILL
        assert D.label(0.3, 0.3) is Trend.UP
        assert D.label(-0.3, 0.3) is Trend.DOWN
        assert D.label(-0.31, 0.3) is Trend.DOWN
        assert D.label(0.29, 0.3) is Trend.STILL

    def test_label_array_matches_scalar(self):
        dx = np.array([-1.0, -0.3, -0.1, 0.0, 0.1, 0.3, 1.0])
        expected = [D.label(v, 0.3) for v in dx]
        np.testing.assert_array_equal(D.label_array(dx, 0.3), expected)

    def test_trend_signs(self):
        assert [t.sign for t in (Trend.STILL, Trend.DOWN, Trend.UP)] == [0, -1, 1]

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            D.label(1.0, 0.0)


def _series(prices):
    return D.TimeSeries(np.arange(len(prices)), np.asarray(prices, dtype=float))


class TestSliceWindows:
    def test_single_window(self):
        ds = D.slice_windows(_series(np.arange(31.0)), 30, 0.5)
        assert len(ds) == 1
        assert ds.deltas[0] == 1.0 and ds.labels[0] == Trend.UP

    def test_overlapping_windows(self):
        ds = D.slice_windows(_series(np.arange(35.0)), 30, 0.5)
        assert len(ds) == 5
        for a, b in zip(ds.windows, ds.windows[1:]):
            np.testing.assert_array_equal(a[1:], b[:-1])

    def test_disjoint_windows(self):
        ds = D.slice_windows(_series(np.arange(90.0)), 30, 0.5, stride=30)
        assert len(ds) == 2
        assert set(ds.windows[0]).isdisjoint(ds.windows[1])

    def test_too_short(self):
        with pytest.raises(D.DataError):
            D.slice_windows(_series(np.arange(30.0)), 30, 0.5)

    def test_labels_round_trip_from_raw_prices(self):
        s = D.synth_series(3, 400)
        ds = D.slice_windows(s, 30, 0.4)
        for i, start in enumerate(ds.starts):
            dx = D.delta(s.prices[start + 30], s.prices[start + 29])
            np.testing.assert_array_equal(ds.windows[i], s.prices[start : start + 30])
            assert ds.deltas[i] == dx
            assert ds.labels[i] == D.label(dx, 0.4)

    @given(st.integers(31, 200), st.integers(1, 40))
    def test_window_count(self, length, stride):
        ds = D.slice_windows(_series(np.arange(float(length))), 30, 0.5, stride=stride)
        assert len(ds) == (length - 30) // stride


class TestSelectThreshold:
    def test_symmetric_tertiles(self):
        # |dx| tertile boundary at 0.3: a third below, two thirds at or above
        large = np.linspace(0.3, 2.0, 100)
        dx = np.concatenate([np.linspace(-0.29, 0.29, 100), large, -large])
        th = D.select_threshold(dx)
        assert th == pytest.approx(0.3, abs=0.01)
        ratios = np.bincount(D.label_array(dx, th), minlength=3) / len(dx)
        np.testing.assert_allclose(ratios, 1 / 3, atol=0.005)

    def test_three_equally_frequent_values_picks_smallest_candidate(self):
        dx = np.array([-1.0, 0.0, 1.0] * 5)
        th = D.select_threshold(dx)
        assert th == 0.5  # midpoint of 0 and 1 is the smallest candidate
        np.testing.assert_array_equal(np.bincount(D.label_array(dx, th)), [5, 5, 5])

    def test_all_zero_is_degenerate(self):
        with pytest.raises(D.DataError):
            D.select_threshold(np.zeros(10))

    def test_needs_three_values(self):
        with pytest.raises(D.DataError):
            D.select_threshold([1.0, -1.0])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=40))
    def test_matches_brute_force_scan(self, values):
        dx = np.array(values)
        if not np.any(dx != 0):
            return
        th = D.select_threshold(dx)
        mags = sorted(set(np.abs(dx)))
        cands = sorted({m for m in mags if m > 0} | {(a + b) / 2 for a, b in zip(mags, mags[1:]) if (a + b) / 2 > 0})

        def score(t):
            counts = [0, 0, 0]
            for v in dx:
                counts[int(D.label(v, t))] += 1
            return max(abs(c / len(dx) - 1 / 3) for c in counts)

        best = min(score(c) for c in cands)
        assert score(th) == best
        assert th == min(c for c in cands if score(c) == best)


class TestSplits:
    def test_dataset_split(self):
        s = D.synth_series(0, 130)
        ds = D.slice_windows(s, 30, 0.5)
        tr, dv, te = D.chronological_split(ds, 80, 10, 10)
        assert list(tr.starts) == list(range(80))
        assert list(dv.starts) == list(range(80, 90))
        assert list(te.starts) == list(range(90, 100))
        assert (tr.split_tag, dv.split_tag, te.split_tag) == ("train", "dev", "test")

    def test_insufficient(self):
        ds = D.slice_windows(D.synth_series(0, 60), 30, 0.5)
        with pytest.raises(D.DataError):
            D.chronological_split(ds, 20, 10, 10)

    @given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40))
    def test_disjoint_and_ordered(self, a, b, c):
        s = D.synth_series(1, 200)
        ds = D.slice_windows(s, 30, 0.5)
        if a + b + c > len(ds):
            return
        parts = D.chronological_split(ds, a, b, c)
        flat = np.concatenate([p.starts for p in parts])
        np.testing.assert_array_equal(flat, np.arange(a + b + c))

    def test_series_split(self):
        s = D.synth_series(0, 100)
        tr, dv, te = D.split_series(s, 60, 20, 20)
        assert (len(tr), len(dv), len(te)) == (60, 20, 20)
        np.testing.assert_array_equal(np.concatenate([tr.prices, dv.prices, te.prices]), s.prices)


class TestPearson:
    def test_self_correlation(self):
        x = np.random.default_rng(0).standard_normal(50)
        assert D.pearson(x, x) == pytest.approx(1.0)

    def test_reversed(self):
        assert D.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert D.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(9 / (2 * math.sqrt(21)), abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            D.pearson([1, 1, 1], [1, 2, 3])

    @given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30))
    def test_bounded(self, pairs):
        x, y = map(np.array, zip(*pairs))
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return
        try:
            r = D.pearson(x, y)
        except ValueError:
            return
        assert abs(r) <= 1 + 1e-12


class TestSynth:
    def test_deterministic(self):
        a, b = D.synth_series(11, 500), D.synth_series(11, 500)
        np.testing.assert_array_equal(a.prices, b.prices)
        assert not np.array_equal(a.prices, D.synth_series(12, 500).prices)

    def test_zero_noise_positive_drift_is_all_up(self):
        s = D.synth_series(0, 200, D.SynthParams(drifts=(0.5,), noise=0.0))
        ds = D.slice_windows(s, 30, 0.4)
        assert np.all(ds.labels == Trend.UP)

    def test_length(self):
        assert len(D.synth_series(0, 1234)) == 1234

    def test_default_params_balanced_dev_split(self):
        s = D.synth_series(0, 60000)
        _, dev, _ = D.split_series(s, 50000, 5000, 5000)
        th = D.select_threshold(D.slice_windows(dev, 30, 1.0).deltas)
        ratios = D.stats(D.slice_windows(dev, 30, th, split_tag="dev")).class_ratios
        assert all(0.2 <= r <= 0.5 for r in ratios)


class TestStats:
    def test_constant_deltas(self):
        ds = D.LabeledDataset(np.zeros((4, 3)), [2] * 4, [0.7] * 4, 0.5)
        st_ = D.stats(ds)
        assert st_.mean == pytest.approx(0.7) and st_.std == 0.0

    def test_hand_counted_ratios(self):
        labels = [0, 0, 1, 2, 2, 2, 1, 0, 2, 2]
        ds = D.LabeledDataset(np.zeros((10, 3)), labels, np.zeros(10), 0.5)
        assert D.stats(ds).class_ratios == (0.3, 0.2, 0.5)
        assert sum(D.stats(ds).class_ratios) == pytest.approx(1.0, abs=1e-9)


class TestCsv:
    def test_round_trip(self, tmp_path):
        s = D.synth_series(5, 300)
        path = tmp_path / "s.csv"
        D.write_csv(s, path)
        back = D.read_csv(path)
        np.testing.assert_array_equal(back.prices, s.prices)
        np.testing.assert_array_equal(back.timestamps, s.timestamps)

    def test_rejects_non_monotone(self):
        with pytest.raises(D.DataError):
            D.read_csv(io.StringIO("timestamp,price\n1,10\n1,11\n"))

    def test_rejects_bad_header(self):
        with pytest.raises(D.DataError):
            D.read_csv(io.StringIO("time,close\n1,10\n2,11\n"))

    def test_rejects_garbage_row(self):
        with pytest.raises(D.DataError):
            D.read_csv(io.StringIO("timestamp,price\n1,10\n2,abc\n"))


def test_standardize_windows():
    w = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
    out = D.standardize_windows(w)
    np.testing.assert_allclose(out[0], [-1.224744871391589, 0.0, 1.224744871391589])
    np.testing.assert_array_equal(out[1], [0.0, 0.0, 0.0])
