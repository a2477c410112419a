"""Pseudo-stereo supervision on the virtual rig center.

The four fisheyes are resampled onto the rig-centered sphere using a
depth map, stitched into two panoramas from the back-to-back pairs and
compared after a yaw alignment. Panorama ``first`` (cameras 1 and 3) is
expressed in camera 1's frame, which coincides with the rig frame;
panorama ``second`` (cameras 2 and 4) is expressed in camera 2's frame,
i.e. the rig frame yawed by +90 deg. Aligning ``first`` onto ``second``
therefore takes ``quarter_turns=-1`` with :func:`yaw_rotate`.

Each loss has a ``*_grad`` twin returning the value together with its
derivatives with respect to the input images (and disparity), used by the
refiner. Masks are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config
from .cost import PAIRS, band_mask, column_owner
from .rig import CameraRig, project_fisheye, project_fisheye_jacobian, world_to_camera
from .sphere import ErpGrid, sample_bilinear, sample_bilinear_grad, taps_in_fov

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

ALIGN_QUARTER_TURNS = -1

# disparity differences below this count as exact zeros in the smoothness
# subgradient, so rounding noise on a flat field yields no gradient
SMOOTH_DEADZONE = 1e-9


@dataclass
class PanoramaPair:
    """Two stitched center panoramas with validity and column ownership."""

    first: np.ndarray
    second: np.ndarray
    first_valid: np.ndarray
    second_valid: np.ndarray
    first_owner: np.ndarray
    second_owner: np.ndarray


@dataclass
class LossBreakdown:
    photometric: float
    smoothness: float
    gradient: float
    total: float
    pixels: int

    def as_dict(self) -> dict:
        return {
            "L_p": self.photometric,
            "L_s": self.smoothness,
            "L_g": self.gradient,
            "L_total": self.total,
            "pixels": self.pixels,
        }


def _views_from_inverse_depth(fisheyes, rig: CameraRig, inv_depth: np.ndarray, grid: ErpGrid, with_grad: bool):
    dirs = grid.directions()
    views = np.zeros((4,) + grid.shape)
    masks = np.zeros((4,) + grid.shape, dtype=bool)
    grads = np.zeros((4,) + grid.shape) if with_grad else None
    depth = 1.0 / inv_depth
    for i in range(4):
        cam = rig[i]
        ray = world_to_camera(dirs, cam.extrinsics) - cam.extrinsics.translation
        p_cam = ray * depth[..., None] + cam.extrinsics.translation
        uv, in_fov = project_fisheye(p_cam, cam.intrinsics)
        img = np.asarray(fisheyes[i], dtype=np.float64)
        vals, _ = sample_bilinear(img, uv)
        ok = in_fov & taps_in_fov(cam.intrinsics, uv)
        views[i] = np.where(ok, vals, 0.0)
        masks[i] = ok
        if with_grad:
            # dP_cam/dq = -R d / q^2
            dp = -ray * (depth * depth)[..., None]
            duv = np.einsum("...ij,...j->...i", project_fisheye_jacobian(p_cam, cam.intrinsics), dp)
            g = sample_bilinear_grad(img, uv)
            grads[i] = np.where(ok, (g * duv).sum(axis=-1), 0.0)
    return views, masks, grads


def project_to_center(fisheyes, rig: CameraRig, depth, grid: ErpGrid):
    """Resample every fisheye onto the rig-centered sphere at ``depth``.

    Args:
        fisheyes: Four grayscale fisheye images.
        rig: Camera rig.
        depth: ``H x W`` depth in meters on ``grid`` (rig frame).
        grid: ERP grid.

    Returns:
        ``(views, masks)`` of shapes ``4 x H x W``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != grid.shape:
        raise ValueError(f"depth is {depth.shape}, grid is {grid.shape}")
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    views, masks, _ = _views_from_inverse_depth(fisheyes, rig, 1.0 / depth, grid, False)
    return views, masks


def yaw_rotate(pano: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Yaw the panorama by ``quarter_turns * 90`` deg (circular column shift).

    Content moves toward increasing azimuth for positive turns.
    """
    w = pano.shape[-1]
    if w % 4:
        raise ValueError(f"panorama width {w} is not divisible by 4")
    return np.roll(pano, (quarter_turns % 4) * (w // 4), axis=-1)


def stitch_pair(views: np.ndarray, masks: np.ndarray) -> PanoramaPair:
    """Hard-seam stitching of cameras (1, 3) and (2, 4).

    Every column of a panorama comes from exactly one camera: the one
    whose 180 deg band contains it.
    """
    views = np.asarray(views)
    masks = np.asarray(masks, dtype=bool)
    if views.shape[0] != 4 or masks.shape != views.shape[:1] + views.shape[-2:]:
        raise ValueError("stitch_pair needs 4 views with matching masks")
    w = views.shape[-1]
    out = []
    for k, (a, b) in enumerate(PAIRS):
        take = band_mask(w, a)
        img = np.where(take, views[a], views[b])
        valid = np.where(take, masks[a], masks[b])
        owner = column_owner(w, (a, b))
        # second panorama lives in camera 2's frame
        turns = -k
        out.append((yaw_rotate(img, turns), yaw_rotate(valid, turns), yaw_rotate(owner, turns)))
    (i1, m1, o1), (i2, m2, o2) = out
    return PanoramaPair(i1, i2, m1, m2, o1, o2)


def seam_columns(owner: np.ndarray, width: int) -> np.ndarray:
    """Columns within ``width`` of an ownership change (circularly)."""
    w = owner.shape[-1]
    out = np.zeros(w, dtype=bool)
    if width <= 0:
        return out
    starts = np.nonzero(owner != np.roll(owner, 1))[0]
    for s in starts:
        out[(s + np.arange(-width, width)) % w] = True
    return out


# -- finite differences and their adjoints ---------------------------------


def _dx(x):
    return np.roll(x, -1, axis=-1) - x


def _dx_t(g):
    return np.roll(g, 1, axis=-1) - g


def _dy(x):
    out = np.zeros_like(x)
    out[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return out


def _dy_t(g):
    g = g.copy()
    g[..., -1, :] = 0.0
    out = -g
    out[..., 1:, :] += g[..., :-1, :]
    return out


def _box3(x):
    h = x.shape[-2]
    rows = sum(x[..., np.clip(np.arange(h) + o, 0, h - 1), :] for o in (-1, 0, 1))
    return (np.roll(rows, 1, axis=-1) + rows + np.roll(rows, -1, axis=-1)) / 9.0


def _box3_t(g):
    cols = (np.roll(g, 1, axis=-1) + g + np.roll(g, -1, axis=-1)) / 9.0
    out = cols.copy()
    # row i-1 (clamped) feeds output row i
    out[..., :-1, :] += cols[..., 1:, :]
    out[..., 0, :] += cols[..., 0, :]
    # row i+1 (clamped) feeds output row i
    out[..., 1:, :] += cols[..., :-1, :]
    out[..., -1, :] += cols[..., -1, :]
    return out


def forward_pair_mask(mask: np.ndarray) -> np.ndarray:
    """Pixels whose +u and +v neighbors are also in ``mask``."""
    out = mask & np.roll(mask, -1, axis=-1)
    out[..., :-1, :] &= mask[..., 1:, :]
    out[..., -1, :] = False
    return out


def _weights(mask: np.ndarray, what: str) -> np.ndarray:
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise ValueError(f"empty mask for {what}")
    return mask / count


# -- SSIM -------------------------------------------------------------------


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM over 3x3 mean windows (azimuth wraps, rows clamp)."""
    return _ssim_parts(a, b)[0]


def _ssim_parts(a, b):
    mu_a, mu_b = _box3(a), _box3(b)
    s_aa = _box3(a * a) - mu_a * mu_a
    s_bb = _box3(b * b) - mu_b * mu_b
    s_ab = _box3(a * b) - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * s_ab + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = s_aa + s_bb + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    return s, (mu_a, mu_b, n1, n2, d1, d2)


def _ssim_backward(a, b, g, parts):
    s, (mu_a, mu_b, n1, n2, d1, d2) = parts
    den = d1 * d2
    g_n1 = g * n2 / den
    g_n2 = g * n1 / den
    g_d1 = -g * s / d1
    g_d2 = -g * s / d2
    g_mu_a = 2 * mu_b * g_n1 - 2 * mu_b * g_n2 + 2 * mu_a * g_d1 - 2 * mu_a * g_d2
    g_mu_b = 2 * mu_a * g_n1 - 2 * mu_a * g_n2 + 2 * mu_b * g_d1 - 2 * mu_b * g_d2
    g_ab = _box3_t(2 * g_n2)
    g_sq = _box3_t(g_d2)
    ga = _box3_t(g_mu_a) + 2 * a * g_sq + b * g_ab
    gb = _box3_t(g_mu_b) + 2 * b * g_sq + a * g_ab
    return ga, gb


# -- losses -----------------------------------------------------------------


def photometric_loss_grad(a, b, mask=None, alpha: float = config.SSIM_ALPHA):
    """Value and image gradients of the SSIM + L1 photometric loss."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("photometric inputs differ in shape")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = _weights(mask, "photometric loss")
    parts = _ssim_parts(a, b)
    diff = a - b
    per_pixel = alpha / 2 * (1 - parts[0]) + (1 - alpha) * np.abs(diff)
    value = float(np.sum(per_pixel * w))
    ga, gb = _ssim_backward(a, b, -alpha / 2 * w, parts)
    l1 = (1 - alpha) * w * np.sign(diff)
    return value, ga + l1, gb - l1


def photometric_loss(a, b, mask=None, alpha: float = config.SSIM_ALPHA) -> float:
    """Masked mean of ``alpha/2 (1 - SSIM) + (1 - alpha) |a - b|``.

    Raises:
        ValueError: If the mask is empty.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("photometric inputs differ in shape")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = _weights(mask, "photometric loss")
    per_pixel = alpha / 2 * (1 - ssim_map(a, b)) + (1 - alpha) * np.abs(a - b)
    return float(np.sum(per_pixel * w))


def gradient_loss_grad(a, b, mask=None):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = _weights(forward_pair_mask(mask), "gradient loss")
    ex = _dx(a) - _dx(b)
    ey = _dy(a) - _dy(b)
    value = float(np.sum((np.abs(ex) + np.abs(ey)) * w))
    g = _dx_t(w * np.sign(ex)) + _dy_t(w * np.sign(ey))
    return value, g, -g


def gradient_loss(a, b, mask=None) -> float:
    """Masked mean of ``|du a - du b| + |dv a - dv b|``.

    Forward differences; the pixel and its +u/+v neighbors must all lie in
    ``mask``.
    """
    return gradient_loss_grad(a, b, mask)[0]


def smoothness_loss_grad(disp, guide, mask=None):
    d = np.asarray(disp, dtype=np.float64)
    img = np.asarray(guide, dtype=np.float64)
    if d.shape != img.shape:
        raise ValueError("disparity and guide differ in shape")
    mask = np.ones(d.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = _weights(forward_pair_mask(mask), "smoothness loss")
    dxd, dyd = _dx(d), _dy(d)
    dxi, dyi = _dx(img), _dy(img)
    ex, ey = np.exp(-np.abs(dxi)), np.exp(-np.abs(dyi))
    value = float(np.sum((np.abs(dxd) * ex + np.abs(dyd) * ey) * w))
    sx = np.where(np.abs(dxd) > SMOOTH_DEADZONE, np.sign(dxd), 0.0)
    sy = np.where(np.abs(dyd) > SMOOTH_DEADZONE, np.sign(dyd), 0.0)
    g_d = _dx_t(w * sx * ex) + _dy_t(w * sy * ey)
    g_i = _dx_t(-w * np.abs(dxd) * ex * np.sign(dxi)) + _dy_t(-w * np.abs(dyd) * ey * np.sign(dyi))
    return value, g_d, g_i


def smoothness_loss(disp, guide, mask=None) -> float:
    """Edge-aware smoothness ``|du d| e^{-|du I|} + |dv d| e^{-|dv I|}``.

    Azimuth differences wrap around; the mean runs over pixels whose
    forward neighbors are inside ``mask`` (everything by default).
    """
    return smoothness_loss_grad(disp, guide, mask)[0]


def _aligned(pair: PanoramaPair, quarter_turns: int, seam_width: int):
    a = yaw_rotate(pair.first, quarter_turns)
    a_valid = yaw_rotate(pair.first_valid, quarter_turns)
    a_owner = yaw_rotate(pair.first_owner, quarter_turns)
    seams = seam_columns(a_owner, seam_width) | seam_columns(pair.second_owner, seam_width)
    mask = a_valid & pair.second_valid & ~seams
    return a, pair.second, mask


def total_loss_grad(
    pair: PanoramaPair,
    disp,
    beta=config.LOSS_WEIGHTS,
    alpha: float = config.SSIM_ALPHA,
    quarter_turns: int = ALIGN_QUARTER_TURNS,
    seam_width: int = config.SEAM_WIDTH,
):
    """Loss breakdown plus gradients w.r.t. ``first``, ``second`` and ``disp``.

    ``disp`` is given in the frame of ``first``.
    """
    a, b, mask = _aligned(pair, quarter_turns, seam_width)
    d = yaw_rotate(np.asarray(disp, dtype=np.float64), quarter_turns)
    lp, ga, gb = photometric_loss_grad(a, b, mask, alpha)
    ls1, gd1, gi1 = smoothness_loss_grad(d, a, mask)
    ls2, gd2, gi2 = smoothness_loss_grad(d, b, mask)
    lg, gga, ggb = gradient_loss_grad(a, b, mask)
    b1, b2, b3 = beta
    ls = ls1 + ls2
    total = b1 * lp + b2 * ls + b3 * lg
    grad_a = b1 * ga + b2 * gi1 + b3 * gga
    grad_b = b1 * gb + b2 * gi2 + b3 * ggb
    grad_d = b2 * (gd1 + gd2)
    report = LossBreakdown(lp, ls, lg, total, int(np.count_nonzero(mask)))
    return report, yaw_rotate(grad_a, -quarter_turns), grad_b, yaw_rotate(grad_d, -quarter_turns)


def total_loss(
    pair: PanoramaPair,
    disp,
    beta=config.LOSS_WEIGHTS,
    alpha: float = config.SSIM_ALPHA,
    quarter_turns: int = ALIGN_QUARTER_TURNS,
    seam_width: int = config.SEAM_WIDTH,
) -> LossBreakdown:
    """Weighted photometric, smoothness and gradient losses of the aligned pair.

    ``first`` is yawed by ``quarter_turns`` onto ``second``; the joint mask
    excludes invalid pixels and ``seam_width`` columns on each side of
    every stitch seam of either panorama.
    """
    a, b, mask = _aligned(pair, quarter_turns, seam_width)
    d = yaw_rotate(np.asarray(disp, dtype=np.float64), quarter_turns)
    lp = photometric_loss(a, b, mask, alpha)
    ls = smoothness_loss(d, a, mask) + smoothness_loss(d, b, mask)
    lg = gradient_loss(a, b, mask)
    b1, b2, b3 = beta
    return LossBreakdown(lp, ls, lg, b1 * lp + b2 * ls + b3 * lg, int(np.count_nonzero(mask)))
