import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_cell
from gust.exceptions import InvalidCell
from gust.geometry import (dilate, erode, iou, resample_bilinear, saturation_distance, to_binary,
                           to_sdf, volume_fraction)


def brute_sdf(cell):
    """O(N^2) nearest-opposite-phase scan between pixel centers."""
    h, w = cell.shape
    out = np.empty((h, w))
    pts = [(r, c) for r in range(h) for c in range(w)]
    for r, c in pts:
        best = math.inf
        for rr, cc in pts:
            if cell[rr, cc] != cell[r, c]:
                best = min(best, math.hypot(r - rr, c - cc))
        out[r, c] = best if cell[r, c] else -best
    return out


def brute_max_filter(cell, s):
    h, w = cell.shape
    k = s // 2
    out = np.zeros_like(cell)
    for r in range(h):
        for c in range(w):
            m = 0
            for dr in range(-k, k + 1):
                for dc in range(-k, k + 1):
                    rr = min(max(r + dr, 0), h - 1)
                    cc = min(max(c + dc, 0), w - 1)
                    m = max(m, cell[rr, cc])
            out[r, c] = m
    return out


cells = st.builds(
    lambda seed, h, w: random_cell(np.random.default_rng(seed), (h, w)),
    st.integers(0, 2**31), st.integers(4, 20), st.integers(4, 20))


class TestValidation:
    def test_rejects_non_binary(self):
        with pytest.raises(InvalidCell):
            to_sdf(np.full((8, 8), 2))

    def test_rejects_tiny(self):
        with pytest.raises(InvalidCell):
            to_sdf(np.ones((3, 8), dtype=np.uint8))

    def test_rejects_wrong_rank(self):
        with pytest.raises(InvalidCell):
            to_sdf(np.ones((4, 4, 4), dtype=np.uint8))


class TestSDF:
    def test_all_material_saturates_positive(self):
        sdf = to_sdf(np.ones((8, 8), dtype=np.uint8))
        assert np.all(sdf >= 0.5)
        assert np.all(sdf == saturation_distance((8, 8)))

    def test_single_pixel_values(self):
        c = np.zeros((9, 9), dtype=np.uint8)
        c[4, 4] = 1
        sdf = to_sdf(c)
        assert sdf[4, 4] == 1.0
        assert sdf[4, 6] == -2.0
        np.testing.assert_allclose(sdf, brute_sdf(c), atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        c = random_cell(rng, (int(rng.integers(4, 33)), int(rng.integers(4, 33))), p=rng.uniform(0.2, 0.8))
        np.testing.assert_allclose(to_sdf(c), brute_sdf(c), rtol=0, atol=1e-9)

    @given(cells)
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, c):
        assert np.array_equal(to_binary(to_sdf(c)), c)

    @given(cells)
    @settings(max_examples=30, deadline=None)
    def test_sign_matches_phase(self, c):
        sdf = to_sdf(c)
        assert np.array_equal(sdf > 0, c == 1)
        assert np.all(np.abs(sdf) >= 1.0)


class TestToBinary:
    def test_all_positive(self):
        assert to_binary(np.full((5, 5), 0.3)).all()

    def test_infinite_threshold(self):
        assert not to_binary(np.random.default_rng(0).normal(size=(6, 6)), np.inf).any()

    def test_disk(self):
        r0 = 5.3
        rr, cc = np.mgrid[0:21, 0:21]
        field = -np.hypot(rr - 10, cc - 10) + r0
        expected = np.array([[1 if math.hypot(r - 10, c - 10) < r0 else 0 for c in range(21)]
                             for r in range(21)])
        assert np.array_equal(to_binary(field), expected)

    def test_strict_inequality(self):
        assert not to_binary(np.zeros((4, 4))).any()


class TestMorphology:
    @given(cells)
    @settings(max_examples=30, deadline=None)
    def test_scale_one_identity(self, c):
        assert np.array_equal(dilate(c, 1), c)
        assert np.array_equal(erode(c, 1), c)

    def test_single_pixel_dilates_to_block(self):
        c = np.zeros((9, 9), dtype=np.uint8)
        c[4, 4] = 1
        expected = np.zeros_like(c)
        expected[3:6, 3:6] = 1
        assert np.array_equal(dilate(c, 3), expected)

    def test_block_erodes_to_center(self):
        c = np.zeros((9, 9), dtype=np.uint8)
        c[3:6, 3:6] = 1
        expected = np.zeros_like(c)
        expected[4, 4] = 1
        assert np.array_equal(erode(c, 3), expected)

    def test_dilate_matches_double_loop(self):
        c = random_cell(np.random.default_rng(7), (64, 64))
        assert np.array_equal(dilate(c, 5), brute_max_filter(c, 5))

    @given(cells, st.sampled_from([1, 3, 5, 7, 9]))
    @settings(max_examples=40, deadline=None)
    def test_duality(self, c, s):
        assert np.array_equal(erode(c, s), 1 - dilate(1 - c, s))

    @given(cells, st.sampled_from([1, 3, 5]), st.sampled_from([3, 5, 7]))
    @settings(max_examples=40, deadline=None)
    def test_extensive_and_monotone(self, c, s1, s2):
        lo, hi = min(s1, s2), max(s1, s2)
        assert np.all(dilate(c, lo) >= c)
        assert np.all(erode(c, lo) <= c)
        assert np.all(dilate(c, lo) <= dilate(c, hi))
        assert np.all(erode(c, lo) >= erode(c, hi))

    @pytest.mark.parametrize("bad", [0, 2, -1, 4])
    def test_rejects_even_or_nonpositive(self, bad):
        with pytest.raises(ValueError):
            dilate(np.ones((5, 5), dtype=np.uint8), bad)


class TestResample:
    def test_nodes(self):
        f = np.random.default_rng(1).normal(size=(6, 7))
        rr, cc = np.mgrid[0:6, 0:7]
        pts = np.stack([rr, cc], axis=-1).astype(float)
        assert np.array_equal(resample_bilinear(f, pts), f)

    def test_midpoint_mean(self):
        f = np.random.default_rng(2).normal(size=(5, 5))
        v = resample_bilinear(f, np.array([[2.0, 1.5]]))
        assert v[0] == pytest.approx(0.5 * (f[2, 1] + f[2, 2]), abs=1e-15)

    def test_clamps(self):
        f = np.random.default_rng(3).normal(size=(5, 5))
        v = resample_bilinear(f, np.array([[-5.0, -5.0], [99.0, 99.0], [-3.0, 2.0]]))
        assert v[0] == f[0, 0] and v[1] == f[4, 4] and v[2] == f[0, 2]

    @given(arrays(np.float64, (4, 5), elements=st.floats(-10, 10)),
           st.floats(-2, 6), st.floats(-2, 7))
    @settings(max_examples=50, deadline=None)
    def test_within_neighbor_range(self, f, r, c):
        v = resample_bilinear(f, np.array([[r, c]]))[0]
        assert f.min() - 1e-12 <= v <= f.max() + 1e-12


class TestVolumeFraction:
    def test_values(self):
        assert volume_fraction(np.ones((8, 8), dtype=np.uint8)) == 1.0
        assert volume_fraction(np.zeros((8, 8), dtype=np.uint8)) == 0.0
        c = np.zeros((64, 64), dtype=np.uint8)
        c[:, :32] = 1
        assert volume_fraction(c) == 0.5

    def test_iou(self):
        a = np.zeros((4, 4), dtype=np.uint8)
        a[:2] = 1
        b = np.zeros_like(a)
        b[1:3] = 1
        assert iou(a, b) == pytest.approx(1 / 3)
        assert iou(a, a) == 1.0
