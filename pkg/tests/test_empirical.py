import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustjet.data import Dataset
from robustjet.empirical import EmpiricalModel, FitError, bin_index, fit, sample_feature


def _column_ds(schema, values):
    X = np.tile(np.asarray(values, dtype=float)[:, None], (1, 87))
    return Dataset(schema, X, np.zeros(len(values), dtype=np.uint8))


def _hand_bin(values, n_bins):
    """Reference binning with explicit interval tests."""
    lo, hi = min(values), max(values)
    w = (hi - lo) / n_bins
    counts = [0] * n_bins
    for v in values:
        for b in range(n_bins):
            left, right = lo + b * w, lo + (b + 1) * w
            if left <= v < right or (b == n_bins - 1 and v == hi):
                counts[b] += 1
                break
    return counts


class TestFit:
    def test_two_bins(self, schema):
        em = fit(_column_ds(schema, [0, 1, 2, 3]), 2)
        h = em.hist(5)
        assert (h.lo, h.hi) == (0.0, 3.0)
        assert list(h.counts) == [2, 2] == _hand_bin([0, 1, 2, 3], 2)
        assert h.total == 4

    def test_constant_feature(self, schema):
        em = fit(_column_ds(schema, [2.5] * 7), 4)
        h = em.hist(0)
        assert h.degenerate
        assert list(h.counts) == [7, 0, 0, 0]

    def test_empty_dataset(self, schema):
        with pytest.raises(FitError):
            fit(Dataset(schema, np.empty((0, 87)), np.empty(0)), 10)

    def test_bad_bins(self, small_ds):
        with pytest.raises(FitError):
            fit(small_ds, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-50, 50), min_size=1, max_size=40), st.integers(1, 12))
    def test_matches_hand_binning(self, values, n_bins):
        # integer-valued data keeps bin edges away from representation ambiguity
        from robustjet.data import default_schema
        em = fit(_column_ds(default_schema(), values), n_bins)
        if min(values) == max(values):
            assert em.counts[0].tolist() == [len(values)] + [0] * (n_bins - 1)
        else:
            assert em.counts[0].tolist() == _hand_bin(values, n_bins)
        assert np.all(em.counts.sum(axis=1) == len(values))

    def test_train_split_bins(self, small_ds):
        em = fit(small_ds, 100)
        assert em.n_bins == 100
        assert em.total == small_ds.n

    def test_json_roundtrip(self, small_ds, tmp_path):
        em = fit(small_ds, 13)
        em.save(tmp_path / "h.json")
        back = EmpiricalModel.load(tmp_path / "h.json")
        np.testing.assert_array_equal(back.counts, em.counts)
        np.testing.assert_array_equal(back.lo, em.lo)
        np.testing.assert_array_equal(back.hi, em.hi)


def _model_with_counts(schema, counts, lo=0.0, hi=2.0):
    counts = np.tile(np.asarray(counts)[None, :], (87, 1))
    return EmpiricalModel(schema, np.full(87, lo), np.full(87, hi), counts)


class TestSample:
    def test_degenerate_returns_constant(self, schema):
        em = fit(_column_ds(schema, [2.5] * 3), 10)
        g = np.random.default_rng(0)
        assert all(sample_feature(em, 3, g) == 2.5 for _ in range(100))

    def test_bin_frequency(self, schema):
        em = _model_with_counts(schema, [3, 1])
        g = np.random.default_rng(1)
        draws = np.array([sample_feature(em, 0, g) for _ in range(100_000)])
        assert np.mean(draws < 1.0) == pytest.approx(0.75, abs=0.01)

    def test_frequency_convergence_4_sigma(self, schema):
        counts = np.array([5, 0, 2, 9, 1, 3])
        em = _model_with_counts(schema, counts, lo=-1.0, hi=5.0)
        g = np.random.default_rng(2)
        n = 100_000
        u = g.random((n, 2))
        v = em.draw(np.full(n, 7), u[:, 0], u[:, 1])
        freq = np.bincount(bin_index(v, -1.0, 5.0, 6), minlength=6)
        p = counts / counts.sum()
        sd = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(freq - n * p) <= 4 * sd + 1e-9)
        assert freq[1] == 0

    def test_range(self, small_ds):
        em = fit(small_ds, 50)
        g = np.random.default_rng(3)
        for f in range(87):
            vals = [sample_feature(em, f, g) for _ in range(50)]
            assert min(vals) >= em.lo[f] and max(vals) <= em.hi[f]

    def test_determinism(self, small_ds):
        em = fit(small_ds, 20)
        a = [sample_feature(em, f % 87, np.random.default_rng(9)) for f in range(30)]
        b = [sample_feature(em, f % 87, np.random.default_rng(9)) for f in range(30)]
        assert a == b

    def test_index_out_of_range(self, small_ds):
        em = fit(small_ds, 20)
        with pytest.raises(IndexError):
            sample_feature(em, 87, np.random.default_rng(0))
