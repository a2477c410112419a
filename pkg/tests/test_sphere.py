import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from omnisweep.rig import Camera, CameraRig, Extrinsics, make_rig, project_fisheye, world_to_camera
from omnisweep.sphere import (
    ErpGrid,
    make_hypotheses,
    sample_bilinear,
    sample_bilinear_grad,
    spherical_point,
    sweep_warp,
)
from omnisweep.synth import SyntheticScene, Texture, render_fisheye


class TestSphericalPoint:
    def test_forward(self):
        np.testing.assert_array_equal(spherical_point(0.0, 0.0, 1.0), [1.0, 0.0, 0.0])

    def test_pole_limit(self):
        np.testing.assert_allclose(spherical_point(math.pi / 2 - 1e-12, 0.7, 2.0), [0.0, 2.0, 0.0], atol=1e-11)

    def test_right(self):
        np.testing.assert_allclose(spherical_point(0.0, math.pi / 2, 3.0), [0.0, 0.0, 3.0], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(e=st.floats(-1.5, 1.5), a=st.floats(-3.1, 3.1), d=st.floats(0.1, 100.0))
    def test_norm_is_distance(self, e, a, d):
        assert np.linalg.norm(spherical_point(e, a, d)) == pytest.approx(d, rel=1e-12)


class TestErpGrid:
    def test_angles(self):
        g = ErpGrid(4, 8)
        np.testing.assert_allclose(g.elevation, math.pi / 2 - (np.arange(4) + 0.5) * math.pi / 4)
        np.testing.assert_allclose(g.azimuth, -math.pi + (np.arange(8) + 0.5) * math.pi / 4)
        assert g.elevation_step == math.pi / 4 and g.azimuth_step == math.pi / 4

    def test_ranges(self):
        g = ErpGrid(7, 14)
        assert np.all(np.diff(g.elevation) < 0)
        assert np.all(np.abs(g.elevation) < math.pi / 2)
        assert np.all(np.abs(g.azimuth) < math.pi)

    def test_directions_unit(self):
        np.testing.assert_allclose(np.linalg.norm(ErpGrid(6, 12).directions(), axis=-1), 1.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ErpGrid(0, 4)


class TestHypotheses:
    def test_published_defaults(self):
        h = make_hypotheses(32, 0.55, 1e5)
        inv = h.inverse_depths
        assert len(inv) == 32
        assert inv[0] == pytest.approx(1 / 0.55) and inv[0] == pytest.approx(1.818, abs=1e-3)
        assert inv[-1] == pytest.approx(1e-5, rel=1e-9)
        assert np.all(np.diff(inv) < 0)

    def test_two(self):
        np.testing.assert_allclose(make_hypotheses(2, 1.0, 2.0).inverse_depths, [1.0, 0.5])

    def test_midpoint(self):
        assert make_hypotheses(3, 1.0, 1e12).inverse_depths[1] == pytest.approx(0.5, abs=1e-6)

    @pytest.mark.parametrize("args", [(1, 1.0, 2.0), (4, 2.0, 1.0), (4, 0.0, 1.0), (4, -1.0, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            make_hypotheses(*args)

    @settings(max_examples=50, deadline=None)
    @given(idx=st.floats(0.0, 31.0))
    def test_index_roundtrip(self, idx):
        h = make_hypotheses(32, 0.55, 1e5)
        assert h.depth_to_index(h.index_to_depth(idx)) == pytest.approx(idx, abs=1e-9)


class TestBilinear:
    def test_integer_exact(self, rng):
        img = rng.random((5, 7))
        vals, ok = sample_bilinear(img, np.array([[3.0, 2.0], [0.0, 0.0], [6.0, 4.0]]))
        np.testing.assert_array_equal(vals, [img[2, 3], img[0, 0], img[4, 6]])
        assert ok.all()

    def test_midpoint(self):
        vals, ok = sample_bilinear(np.array([[0.0, 1.0]]), np.array([0.5, 0.0]))
        assert vals == 0.5 and ok

    def test_out_of_bounds(self, rng):
        vals, ok = sample_bilinear(rng.random((5, 5)), np.array([-0.7, 3.0]))
        assert not ok and vals == 0.0

    def test_matches_map_coordinates(self, rng):
        img = rng.random((3, 9, 11))
        uv = np.stack([rng.uniform(0, 10, 200), rng.uniform(0, 8, 200)], axis=-1)
        vals, ok = sample_bilinear(img, uv)
        assert ok.all()
        for c in range(3):
            ref = ndimage.map_coordinates(img[c], [uv[:, 1], uv[:, 0]], order=1)
            np.testing.assert_allclose(vals[c], ref, atol=1e-12)

    def test_constant_gradient_zero(self):
        g = sample_bilinear_grad(np.full((4, 4), 0.3), np.array([1.3, 2.2]))
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_ramp_gradient(self):
        img = np.tile(np.arange(6.0), (5, 1))
        np.testing.assert_allclose(sample_bilinear_grad(img, np.array([2.3, 1.7])), [1.0, 0.0])

    def test_gradient_matches_fd(self, rng):
        img = rng.random((2, 12, 12))
        h = 1e-3
        checked = 0
        for _ in range(100):
            u, v = rng.uniform(1, 10, 2)
            # keep central differences inside one bilinear cell
            if min(u % 1, 1 - u % 1, v % 1, 1 - v % 1) < 2 * h:
                continue
            g = sample_bilinear_grad(img, np.array([u, v]))
            fd_u = (sample_bilinear(img, np.array([u + h, v]))[0] - sample_bilinear(img, np.array([u - h, v]))[0]) / (2 * h)
            fd_v = (sample_bilinear(img, np.array([u, v + h]))[0] - sample_bilinear(img, np.array([u, v - h]))[0]) / (2 * h)
            np.testing.assert_allclose(g[:, 0], fd_u, rtol=1e-3, atol=1e-9)
            np.testing.assert_allclose(g[:, 1], fd_v, rtol=1e-3, atol=1e-9)
            checked += 1
        assert checked > 80

    def test_far_edge_is_valid(self):
        vals, ok = sample_bilinear(np.arange(6.0).reshape(2, 3), np.array([2.0, 1.0]))
        assert ok and vals == 5.0


def _rig_with_center_shift(rig, shift):
    cams = []
    for cam in rig.cameras:
        r = cam.extrinsics.rotation
        cams.append(Camera(cam.intrinsics, Extrinsics(r, cam.extrinsics.translation - r @ shift)))
    return CameraRig(tuple(cams))


def _taps_inside_circle(uv, intr):
    """Every bilinear tap with non-zero weight has its center inside the FoV circle."""
    u0, v0 = intr.principal_point
    rmax = intr.radius(intr.half_fov)
    u = np.nan_to_num(uv[..., 0], nan=-1.0)
    v = np.nan_to_num(uv[..., 1], nan=-1.0)
    out = np.ones(u.shape, dtype=bool)
    for tu in (np.floor(u), np.floor(u) + 1):
        for tv in (np.floor(v), np.floor(v) + 1):
            weight = (1 - np.abs(u - tu)) * (1 - np.abs(v - tv))
            out &= (weight <= 0) | (np.hypot(tu - u0, tv - v0) <= rmax)
    return out


class TestSweepWarp:
    def test_constant_source(self, small_rig, small_grid):
        hyp = make_hypotheses(6, 0.55, 1e5)
        vol = sweep_warp(np.full((96, 96), 0.37), small_rig, 1, small_grid, hyp)
        assert vol.values.shape == (6, 1, 24, 48)
        np.testing.assert_allclose(vol.values[:, 0][vol.valid], 0.37, atol=1e-15)
        assert np.all(vol.values[:, 0][~vol.valid] == 0)

    def test_scale_mismatch(self, small_rig, small_grid):
        with pytest.raises(ValueError, match="scale"):
            sweep_warp(np.zeros((40, 40)), small_rig, 0, small_grid, make_hypotheses(4, 1, 10), downsample=2)

    def test_far_hypotheses_share_taps(self):
        rig = make_rig(0.3, (400, 400))
        grid = ErpGrid(40, 80)
        dirs = grid.directions()
        for cam in rig.cameras:
            ext = cam.extrinsics
            far = project_fisheye(world_to_camera(dirs * 1e5, ext), cam.intrinsics)[0]
            # d -> infinity leaves only the rotated direction
            inf = project_fisheye(dirs @ ext.rotation.T, cam.intrinsics)[0]
            ok = np.all(np.isfinite(far) & np.isfinite(inf), axis=-1)
            assert np.max(np.abs(far - inf)[ok]) < 1e-3

    def test_matches_direct_composition(self, small_rig, small_grid, rng):
        img = rng.random((96, 96))
        hyp = make_hypotheses(4, 0.55, 1e5)
        vol = sweep_warp(img, small_rig, 2, small_grid, hyp)
        e = small_grid.elevation[:, None]
        a = small_grid.azimuth[None, :]
        for n, q in enumerate(hyp.inverse_depths):
            p = spherical_point(e, a, 1.0 / q)
            uv, ok = project_fisheye(world_to_camera(p, small_rig[2].extrinsics), small_rig[2].intrinsics)
            vals, tap = sample_bilinear(img, uv)
            np.testing.assert_array_equal(vol.valid[n], ok & tap & _taps_inside_circle(uv, small_rig[2].intrinsics))
            np.testing.assert_allclose(vol.values[n, 0][vol.valid[n]], vals[vol.valid[n]], atol=1e-12)

    def test_sphere_slice_equals_texture(self):
        # smooth texture and a dense fisheye keep bilinear error far below 8-bit precision
        tex = Texture(checker_period=2.0, checker_amplitude=0.3, noise_amplitude=0.3, noise_wavelengths=(2.0, 4.0))
        rig = make_rig(0.2, (800, 800))
        grid = ErpGrid(40, 80)
        hyp = make_hypotheses(8, 0.55, 1e5)
        n = 3
        radius = float(hyp.depths[n])
        scene = SyntheticScene("sphere", radius=radius, texture=tex)
        img = render_fisheye(scene, rig, 0)
        vol = sweep_warp(img, rig, 0, grid, hyp, indices=[n])
        truth = tex(spherical_point(grid.elevation[:, None], grid.azimuth[None, :], radius))
        ok = vol.valid[0]
        assert ok.mean() > 0.4
        assert np.max(np.abs(vol.values[0, 0][ok] - truth[ok])) < 0.5 / 255

    def test_equator_coverage(self):
        rig = make_rig(0.2, (400, 400))
        grid = ErpGrid(40, 160)
        hyp = make_hypotheses(4, 0.55, 1e5)
        eq = grid.height // 2
        half_fov = math.radians(110)
        cover = []
        for i in range(4):
            valid = sweep_warp(np.ones((400, 400)), rig, i, grid, hyp).valid[:, eq]
            cover.append(valid)
            # analytic incidence angle of each equator point seen from the offset camera
            rel = grid.azimuth[None, :] - i * math.pi / 2
            d = hyp.depths[:, None]
            theta = np.arctan2(np.abs(d * np.sin(rel)), d * np.cos(rel) - 0.2)
            inner = theta <= half_fov - math.radians(2)
            assert np.all(valid[inner])
            assert not np.any(valid[theta > half_fov + 1e-9])
        far = hyp.count - 1
        assert cover[0][far].sum() >= math.floor(220 / 360 * grid.width) - 2
        for i in range(2):
            assert np.all(cover[i] | cover[i + 2])

    def test_translation_invariance(self, rng):
        rig = make_rig(0.2, (96, 96))
        shift = np.array([0.5, 0.0, -0.25])
        moved = _rig_with_center_shift(rig, shift)
        grid = ErpGrid(16, 32)
        hyp = make_hypotheses(5, 0.55, 1e5)
        img = rng.random((96, 96))
        a = sweep_warp(img, rig, 1, grid, hyp)
        b = sweep_warp(img, moved, 1, grid, hyp, origin=shift)
        np.testing.assert_array_equal(a.valid, b.valid)
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_taps_move_continuously(self):
        rig = make_rig(0.2, (400, 400))
        grid = ErpGrid(20, 40)
        hyp = make_hypotheses(32, 0.55, 1e5)
        cam = rig[0]
        intr = cam.intrinsics
        dirs = grid.directions()
        slope = max(intr.radius_derivative(np.linspace(0, intr.half_fov, 200)).max(), intr.focal_poly[0])
        t = np.linalg.norm(cam.extrinsics.translation)
        prev = None
        for q in hyp.inverse_depths:
            uv, ok = project_fisheye(world_to_camera(dirs / q, cam.extrinsics), intr)
            if prev is not None:
                both = ok & prev[1]
                step = np.linalg.norm(uv - prev[0], axis=-1)[both]
                # the angular change of the ray is at most |T| dq / |P_cam| with |P_cam| >= 1/q - |T|
                depth_floor = 1.0 / (q + hyp.step) - t
                assert np.all(step <= t * hyp.step * slope / max(depth_floor, 1e-9) * (1 / q) * 1.01 + 1e-9)
            prev = (uv, ok)
