import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsitransfer.data import SpectralCube
from hsitransfer.reduce import (
    LinkBudget,
    ReductionSpec,
    count_edges,
    downlink_budget,
    reduce_to_count,
    reduce_window,
    window_edges,
)


def _cube(bands, seed=0, h=2, w=3):
    return SpectralCube(np.random.default_rng(seed).normal(size=(h, w, bands)))


class TestWindow:
    def test_ten_bands_window_four(self):
        cube = _cube(10)
        out = reduce_window(cube, 4)
        assert out.bands == 3
        x = cube.data.astype(np.float64)
        np.testing.assert_allclose(out.data[..., 0], x[..., 0:4].mean(-1), rtol=1e-6)
        np.testing.assert_allclose(out.data[..., 1], x[..., 4:8].mean(-1), rtol=1e-6)
        np.testing.assert_allclose(out.data[..., 2], x[..., 8:10].mean(-1), rtol=1e-6)

    def test_identity(self):
        cube = _cube(7)
        np.testing.assert_array_equal(reduce_window(cube, 1).data, cube.data)

    def test_224_by_3(self):
        assert reduce_window(_cube(224, h=1, w=1), 3).bands == math.ceil(224 / 3) == 75

    def test_bad_window(self):
        with pytest.raises(ValueError):
            reduce_window(_cube(4), 0)

    def test_spatial_dims_kept(self):
        out = reduce_window(_cube(9, h=4, w=5), 2)
        assert (out.height, out.width) == (4, 5)


class TestCount:
    def test_103_to_100_partition(self):
        edges = count_edges(103, 100)
        widths = np.diff(edges)
        assert edges[0] == 0 and edges[-1] == 103
        assert (widths >= 1).all()
        assert (widths == 1).sum() == 97
        assert (widths == 2).sum() == 3

    def test_identity(self):
        cube = _cube(6)
        np.testing.assert_array_equal(reduce_to_count(cube, 6).data, cube.data)

    def test_constant_cube(self):
        cube = SpectralCube(np.full((2, 2, 50), 3.25))
        for b in (1, 7, 25, 50):
            np.testing.assert_array_equal(reduce_to_count(cube, b).data, 3.25)

    @pytest.mark.parametrize("b", [0, 11])
    def test_out_of_range(self, b):
        with pytest.raises(ValueError):
            reduce_to_count(_cube(10), b)

    def test_spec_label_and_bands(self):
        assert ReductionSpec(target=25).output_bands(103) == 25
        assert ReductionSpec(window=4).output_bands(10) == 3
        with pytest.raises(ValueError):
            ReductionSpec(window=2, target=3)


def _weighted_mean_ok(cube, edges, out):
    widths = np.diff(edges)
    lhs = (out.data.astype(np.float64) * widths).sum(-1) / widths.sum()
    rhs = cube.data.astype(np.float64).mean(-1)
    scale = np.maximum(np.abs(cube.data).mean(-1), 1e-12)
    return np.abs(lhs - rhs).max() / scale.max() <= 1e-6


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 120), st.integers(1, 40), st.integers(0, 10**6))
    def test_window_partition_and_mean(self, bands, window, seed):
        cube = _cube(bands, seed)
        edges = window_edges(bands, window)
        hits = np.zeros(bands, dtype=int)
        for a, b in zip(edges[:-1], edges[1:]):
            hits[a:b] += 1
        assert (hits == 1).all()
        out = reduce_window(cube, window)
        assert out.bands == math.ceil(bands / window)
        assert _weighted_mean_ok(cube, edges, out)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 120), st.data(), st.integers(0, 10**6))
    def test_count_partition_and_mean(self, bands, data, seed):
        target = data.draw(st.integers(1, bands))
        edges = count_edges(bands, target)
        widths = np.diff(edges)
        assert widths.sum() == bands and (widths >= 1).all()
        assert widths.max() - widths.min() <= 1
        cube = _cube(bands, seed)
        assert _weighted_mean_ok(cube, edges, reduce_to_count(cube, target))

    @given(st.integers(1, 200), st.integers(1, 50), st.integers(1, 50))
    def test_monotone_band_count(self, bands, l1, l2):
        lo, hi = sorted((l1, l2))
        assert len(window_edges(bands, lo)) >= len(window_edges(bands, hi))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 10), st.integers(0, 10**6))
    def test_modes_agree_when_divisible(self, count, window, seed):
        cube = _cube(count * window, seed)
        np.testing.assert_array_equal(
            reduce_window(cube, window).data, reduce_to_count(cube, count).data
        )


class TestBudget:
    def test_scene_example(self):
        bits, seconds = downlink_budget(LinkBudget(2048, 2048, 200, 12, 3_000_000))
        assert bits == 10_066_329_600
        assert seconds == pytest.approx(3355.44, abs=0.5)
        assert round(seconds / 60) == 56

    def test_twenty_bands_ten_times_smaller(self):
        full, _ = downlink_budget(LinkBudget(2048, 2048, 200, 12, 3e6))
        small, _ = downlink_budget(LinkBudget(2048, 2048, 20, 12, 3e6))
        assert full == 10 * small

    def test_small(self):
        assert downlink_budget(LinkBudget(100, 100, 50, 8, 1e6)) == (4_000_000, 4.0)

    def test_zero_rate(self):
        with pytest.raises(ValueError):
            LinkBudget(1, 1, 1, 8, 0)
