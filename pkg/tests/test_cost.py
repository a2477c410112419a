import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omnisweep.cost import (
    CostVolume,
    PanoFeatureVolume,
    argmin_index,
    band_columns,
    build_concat_volume,
    build_variance_volume,
    column_owner,
    crop_and_stitch,
    gather_3x3,
    regularize,
    resize_erp,
    softargmin_regress,
)
from omnisweep.sphere import SweepVolume, make_hypotheses, sweep_warp

HYP32 = make_hypotheses(32, 0.55, 1e5)


def _const_sweeps(values, shape=(3, 2, 4, 16)):
    n, c, h, w = shape
    return [SweepVolume(i, np.full(shape, v), np.ones((n, h, w), dtype=bool)) for i, v in enumerate(values)]


def _pano(values, valid=None):
    values = np.asarray(values, dtype=np.float64)
    if valid is None:
        valid = np.ones(values.shape[1:], dtype=bool)
    return PanoFeatureVolume(values, valid, (0, 2))


def _vol(v):
    return CostVolume(np.asarray(v, dtype=np.float64)[None], "variance")


class TestCropAndStitch:
    def test_constant_bands(self):
        p1, p2 = crop_and_stitch(_const_sweeps([1.0, 2.0, 3.0, 4.0]))
        assert p1.values.shape == (2, 3, 4, 16)
        w = 16
        # camera 1 faces azimuth 0 (column W/2), camera 3 faces 180 deg (column 0)
        assert np.all(p1.values[..., w // 4 : 3 * w // 4] == 1.0)
        assert np.all(p1.values[..., : w // 4] == 3.0) and np.all(p1.values[..., 3 * w // 4 :] == 3.0)
        assert set(np.unique(p2.values)) == {2.0, 4.0}
        assert np.all(p2.values[..., w // 2 :] == 2.0) and np.all(p2.values[..., : w // 2] == 4.0)

    @pytest.mark.parametrize("width", [8, 16, 160])
    def test_every_column_owned_once(self, width):
        for pair in ((0, 2), (1, 3)):
            a, b = (band_columns(width, c) for c in pair)
            counts = np.bincount(np.concatenate([a, b]), minlength=width)
            np.testing.assert_array_equal(counts, 1)
            owner = column_owner(width, pair)
            assert np.count_nonzero(owner == pair[0]) == width // 2
            # exactly two seams on a circular panorama
            assert np.count_nonzero(owner != np.roll(owner, 1)) == 2

    def test_band_centered_on_axis(self):
        for cam in range(4):
            cols = band_columns(64, cam)
            az = -np.pi + (cols + 0.5) * 2 * np.pi / 64
            rel = np.angle(np.exp(1j * (az - cam * np.pi / 2)))
            assert np.all(np.abs(rel) < np.pi / 2)
            assert rel.mean() == pytest.approx(0.0, abs=2 * np.pi / 64)

    def test_rejects_mismatch(self):
        sweeps = _const_sweeps([0, 0, 0, 0])
        sweeps[3] = SweepVolume(3, np.zeros((3, 2, 4, 8)), np.ones((3, 4, 8), dtype=bool))
        with pytest.raises(ValueError):
            crop_and_stitch(sweeps)
        with pytest.raises(ValueError):
            crop_and_stitch(sweeps[:3])

    def test_rejects_width_not_multiple_of_four(self):
        with pytest.raises(ValueError):
            band_columns(10, 0)

    def test_sphere_panoramas_agree_at_true_depth(self, medium_sphere, medium_rig, medium_grid):
        images, _ = medium_sphere
        # index 1 of this set sits at 2 m, the sphere radius
        hyp = make_hypotheses(3, 1.0, 1e12)
        sweeps = [sweep_warp(img, medium_rig, i, medium_grid, hyp) for i, img in enumerate(images)]
        p1, p2 = crop_and_stitch(sweeps)
        eq = slice(medium_grid.height // 2 - 2, medium_grid.height // 2 + 2)
        ok = (p1.valid & p2.valid)[:, eq]
        diff = np.abs(p1.values[0][:, eq] - p2.values[0][:, eq])
        right = diff[1][ok[1]].mean()
        assert right < 0.03
        assert right < 0.25 * min(diff[0][ok[0]].mean(), diff[2][ok[2]].mean())


class TestGather:
    def test_identity_kernel(self, rng):
        v = _pano(rng.random((2, 3, 5, 8)))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
        np.testing.assert_array_equal(gather_3x3(v, k).values, v.values)

    def test_constant_preserved(self):
        out = gather_3x3(_pano(np.full((2, 2, 6, 8), 0.7)))
        np.testing.assert_allclose(out.values, 0.7, atol=1e-15)

    def test_impulse_plateau(self):
        x = np.zeros((1, 1, 7, 8))
        x[0, 0, 3, 0] = 1.0
        out = gather_3x3(_pano(x)).values[0, 0]
        expected = np.zeros((7, 8))
        # azimuth wraps around the seam at column 0
        expected[2:5][:, [7, 0, 1]] = 1.0 / 9.0
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_channel_mixing(self, rng):
        v = _pano(rng.random((2, 1, 4, 8)))
        k = np.zeros((2, 2, 3, 3))
        k[0, 1, 1, 1] = 1.0
        k[1, 0, 1, 1] = 2.0
        out = gather_3x3(v, k).values
        np.testing.assert_allclose(out[0], v.values[1])
        np.testing.assert_allclose(out[1], 2 * v.values[0])

    def test_mask_eroded(self):
        valid = np.ones((1, 6, 8), dtype=bool)
        valid[0, 3, 7] = False
        out = gather_3x3(_pano(np.zeros((1, 1, 6, 8)), valid)).valid[0]
        assert out.sum() == 48 - 9
        assert not out[2:5][:, [6, 7, 0]].any()


class TestVariance:
    def test_equal_inputs(self, rng):
        x = rng.random((2, 3, 4, 8))
        np.testing.assert_array_equal(build_variance_volume(_pano(x), _pano(x.copy())).values, 0.0)

    def test_scalar_example(self):
        v = build_variance_volume(_pano(np.full((1, 1, 1, 4), 3.0)), _pano(np.full((1, 1, 1, 4), 1.0)))
        np.testing.assert_array_equal(v.values, 1.0)

    def test_brute_force(self, rng):
        for _ in range(5):
            a = rng.normal(size=(4, 8, 8, 4))
            b = rng.normal(size=(4, 8, 8, 4))
            v = build_variance_volume(_pano(a), _pano(b)).values
            brute = np.empty_like(a)
            for idx in np.ndindex(a.shape):
                pair = [a[idx], b[idx]]
                m = sum(pair) / 2
                brute[idx] = sum((x - m) ** 2 for x in pair) / 2
            np.testing.assert_allclose(v, brute, atol=1e-12, rtol=0)
            np.testing.assert_allclose(v, np.var(np.stack([a, b]), axis=0), atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(
        a=arrays(np.float64, (2, 2, 3, 4), elements=st.floats(-1e3, 1e3)),
        b=arrays(np.float64, (2, 2, 3, 4), elements=st.floats(-1e3, 1e3)),
    )
    def test_symmetric_and_nonnegative(self, a, b):
        ab = build_variance_volume(_pano(a), _pano(b)).values
        ba = build_variance_volume(_pano(b), _pano(a)).values
        np.testing.assert_array_equal(ab, ba)
        assert np.all(ab >= 0)

    def test_invalid_cells_take_slice_maximum(self, rng):
        a = rng.random((2, 3, 4, 8))
        b = rng.random((2, 3, 4, 8))
        valid = np.ones((3, 4, 8), dtype=bool)
        valid[1, 0, :3] = False
        v = build_variance_volume(_pano(a, valid), _pano(b))
        raw = ((a - b) / 2) ** 2
        for c in range(2):
            np.testing.assert_allclose(v.values[c, 1, 0, :3], raw[c, 1][valid[1]].max(), rtol=1e-14)
        np.testing.assert_allclose(v.values[:, 0], raw[:, 0], rtol=1e-14, atol=1e-17)
        np.testing.assert_array_equal(v.valid, valid)


class TestConcatFootprint:
    def _sweeps(self, rng, c=3):
        return [SweepVolume(i, rng.random((5, c, 4, 8)), np.ones((5, 4, 8), dtype=bool)) for i in range(4)]

    def test_channel_counts(self, rng):
        sw = self._sweeps(rng)
        assert build_concat_volume(sw, "4C").values.shape[0] == 12
        assert build_concat_volume(sw, "2C").values.shape[0] == 6

    def test_ratio_4_2_1(self, rng):
        sw = self._sweeps(rng)
        counts = [
            build_concat_volume(sw, "4C").element_count,
            build_concat_volume(sw, "2C").element_count,
            build_variance_volume(*crop_and_stitch(sw)).element_count,
        ]
        assert counts[0] == 2 * counts[1] == 4 * counts[2]

    def test_2c_interleaves(self, rng):
        sw = self._sweeps(rng)
        p1, p2 = crop_and_stitch(sw)
        v = build_concat_volume(sw, "2C").values
        np.testing.assert_array_equal(v[0::2], p1.values)
        np.testing.assert_array_equal(v[1::2], p2.values)

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            build_concat_volume(self._sweeps(rng), "3C")


class TestRegularize:
    def test_zero_passes_identity(self, rng):
        x = rng.random((1, 4, 6, 8))
        out = regularize(CostVolume(x, "variance"), passes=0)
        np.testing.assert_array_equal(out.values, x)
        assert out.kind == "regularized"

    def test_impulse_plateau(self):
        x = np.zeros((1, 5, 6, 8))
        x[0, 2, 3, 0] = 27.0
        out = regularize(CostVolume(x, "variance"), passes=1, window=3).values[0]
        expected = np.zeros((5, 6, 8))
        for n in (1, 2, 3):
            for r in (2, 3, 4):
                for c in (7, 0, 1):
                    expected[n, r, c] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_constant_slices_are_spatial_fixed_points(self, rng):
        per = rng.permutation(8).astype(float)
        x = np.broadcast_to(per[:, None, None], (8, 6, 12))[None].copy()
        out = regularize(CostVolume(x, "variance"), passes=3, out_shape=(12, 24)).values[0]
        # only the hypothesis-axis filter acts on spatially constant slices
        profile = per
        for _ in range(3):
            profile = np.array([profile[max(n - 1, 0)] + profile[n] + profile[min(n + 1, 7)] for n in range(8)]) / 3
        np.testing.assert_allclose(out, np.broadcast_to(profile[:, None, None], out.shape), atol=1e-12)

    def test_constant_slices_keep_unimodal_argmin(self):
        profile = np.abs(np.arange(16) - 6.0)
        x = np.broadcast_to(profile[:, None, None], (16, 6, 12))[None].copy()
        out = regularize(CostVolume(x, "variance"), passes=3, out_shape=(12, 24))
        assert np.all(argmin_index(out) == 6)

    def test_channel_mean(self, rng):
        x = rng.random((3, 4, 5, 8))
        out = regularize(CostVolume(x, "variance"), passes=0)
        np.testing.assert_allclose(out.values[0], x.mean(axis=0))

    def test_edge_guide_keeps_constant(self, rng):
        x = np.full((1, 4, 6, 8), 2.5)
        out = regularize(CostVolume(x, "variance"), guide=rng.random((6, 8)), passes=2)
        np.testing.assert_allclose(out.values, 2.5)

    def test_rejects_other_kinds(self):
        with pytest.raises(ValueError):
            regularize(CostVolume(np.zeros((1, 2, 2, 4)), "regularized"))


class TestResize:
    def test_constant(self):
        np.testing.assert_allclose(resize_erp(np.full((3, 4, 8), 1.5), (16, 32)), 1.5)

    def test_same_shape_copy(self, rng):
        x = rng.random((4, 8))
        y = resize_erp(x, (4, 8))
        np.testing.assert_array_equal(x, y)
        assert y is not x

    def test_azimuth_wrap(self):
        x = np.zeros((2, 4))
        x[:, 0] = 1.0
        y = resize_erp(x, (2, 8))
        # the first output column sits half way between input columns -1 (wrapped) and 0
        np.testing.assert_allclose(y[0], [0.75, 0.75, 0.25, 0, 0, 0, 0, 0.25], atol=1e-12)


class TestSoftargmin:
    def test_delta(self):
        v = np.zeros((32, 1, 1))
        v[5] = -1e9
        assert softargmin_regress(_vol(v), HYP32).values[0, 0] == pytest.approx(5.0, abs=1e-6)

    def test_uniform(self):
        d = softargmin_regress(_vol(np.zeros((32, 2, 3))), HYP32).values
        assert np.all(d == 15.5)

    def test_two_minima(self):
        v = np.full((32, 1, 1), 1e9)
        v[3] = v[7] = 0.0
        assert softargmin_regress(_vol(v), HYP32).values[0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_dyadic_shift_bit_identical(self, rng):
        v = rng.integers(0, 64, size=(32, 4, 5)) / 16.0
        shift = rng.integers(-64, 64, size=(1, 4, 5)) / 8.0
        a = softargmin_regress(_vol(v), HYP32, 0.5).values
        b = softargmin_regress(_vol(v + shift), HYP32, 0.5).values
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(shift=st.floats(-100, 100))
    def test_float_shift_invariance(self, shift):
        v = np.linspace(0, 3, 32)[::-1].reshape(32, 1, 1) ** 2
        a = softargmin_regress(_vol(v), HYP32, 0.3).values
        b = softargmin_regress(_vol(v + shift), HYP32, 0.3).values
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_low_temperature_limit(self, rng):
        # distinct levels 0.05 apart make the minimum unique by a wide margin
        v = np.stack([rng.permutation(32) * 0.05 for _ in range(60)], axis=1).reshape(32, 6, 10)
        d = softargmin_regress(_vol(v), HYP32, 1e-3).values
        np.testing.assert_allclose(d, np.argmin(v, axis=0), atol=1e-3)

    def test_range_and_depth(self, rng):
        d = softargmin_regress(_vol(rng.random((32, 3, 4))), HYP32)
        assert np.all((d.values >= 0) & (d.values <= 31))
        np.testing.assert_allclose(d.depth, 1.0 / HYP32.index_to_inverse_depth(d.values))
        np.testing.assert_allclose(d.probabilities.sum(axis=0), 1.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            softargmin_regress(_vol(np.zeros((32, 1, 1))), HYP32, 0.0)
        with pytest.raises(ValueError):
            softargmin_regress(_vol(np.zeros((31, 1, 1))), HYP32)
        with pytest.raises(ValueError):
            softargmin_regress(_vol(np.full((32, 1, 1), np.nan)), HYP32)
