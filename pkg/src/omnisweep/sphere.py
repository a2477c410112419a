"""Equirectangular grids, inverse-depth hypotheses, bilinear sampling and
spherical sweeping of fisheye images.

ERP layout: pixel centers sit at half-integer fractions, row 0 is the
top (elevation near +90 deg) and column 0 starts at azimuth -180 deg, so
a quarter yaw turn is an exact shift of ``W / 4`` columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rig import CameraRig, project_fisheye, world_to_camera


@dataclass(frozen=True)
class ErpGrid:
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("ERP grid dimensions must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def elevation_step(self) -> float:
        return math.pi / self.height

    @property
    def azimuth_step(self) -> float:
        return 2.0 * math.pi / self.width

    @property
    def elevation(self) -> np.ndarray:
        return math.pi / 2.0 - (np.arange(self.height) + 0.5) * self.elevation_step

    @property
    def azimuth(self) -> np.ndarray:
        return -math.pi + (np.arange(self.width) + 0.5) * self.azimuth_step

    def directions(self) -> np.ndarray:
        """Unit ray per pixel, shape ``(H, W, 3)``."""
        e = self.elevation[:, None]
        a = self.azimuth[None, :]
        return spherical_point(e, a, 1.0)


def spherical_point(elevation, azimuth, d) -> np.ndarray:
    """Point at distance ``d`` along ``(elevation, azimuth)``; shape ``(..., 3)``."""
    e = np.asarray(elevation, dtype=np.float64)
    a = np.asarray(azimuth, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ce = np.cos(e)
    x, y, z = np.broadcast_arrays(d * ce * np.cos(a), d * np.sin(e), d * ce * np.sin(a))
    return np.stack([x, y, z], axis=-1)


@dataclass(frozen=True)
class HypothesisSet:
    """``count`` inverse depths spaced linearly from ``1/d_min`` to ``1/d_max``."""

    count: int
    d_min: float
    d_max: float

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least two hypotheses")
        if not 0.0 < self.d_min < self.d_max:
            raise ValueError(f"invalid depth bounds ({self.d_min}, {self.d_max})")

    @property
    def inverse_depths(self) -> np.ndarray:
        return self.index_to_inverse_depth(np.arange(self.count, dtype=np.float64))

    @property
    def step(self) -> float:
        """Inverse-depth decrement between adjacent hypotheses."""
        return (1.0 / self.d_min - 1.0 / self.d_max) / (self.count - 1)

    @property
    def depths(self) -> np.ndarray:
        return 1.0 / self.inverse_depths

    def index_to_inverse_depth(self, index):
        return 1.0 / self.d_min - np.asarray(index, dtype=np.float64) * self.step

    def inverse_depth_to_index(self, inverse_depth):
        return (1.0 / self.d_min - np.asarray(inverse_depth, dtype=np.float64)) / self.step

    def depth_to_index(self, depth):
        return self.inverse_depth_to_index(1.0 / np.asarray(depth, dtype=np.float64))

    def index_to_depth(self, index):
        return 1.0 / self.index_to_inverse_depth(index)


def make_hypotheses(count: int, d_min: float, d_max: float) -> HypothesisSet:
    return HypothesisSet(int(count), float(d_min), float(d_max))


def _bilinear_taps(shape, uv):
    h, w = shape
    uv = np.asarray(uv, dtype=np.float64)
    u = uv[..., 0]
    v = uv[..., 1]
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    # the far edge samples the last cell at fraction 1
    u0 = np.minimum(np.floor(u), max(w - 2, 0)).astype(np.intp)
    v0 = np.minimum(np.floor(v), max(h - 2, 0)).astype(np.intp)
    fu = u - u0
    fv = v - v0
    i00 = v0 * w + u0
    step_u = 1 if w > 1 else 0
    step_v = w if h > 1 else 0
    return valid, fu, fv, (i00, i00 + step_u, i00 + step_v, i00 + step_v + step_u)


def _as_channels(image) -> tuple[np.ndarray, bool]:
    image = np.asarray(image)
    if image.ndim == 2:
        return image[None], True
    if image.ndim != 3:
        raise ValueError("image must be H x W or C x H x W")
    return image, False


def sample_bilinear(image, uv):
    """Bilinear interpolation at pixel coordinates ``uv = (u, v)``.

    Args:
        image: ``C x H1 x W1`` (or ``H1 x W1``) array.
        uv: Array of shape ``(..., 2)`` with column ``u`` and row ``v``.

    Returns:
        ``(values, valid)``; values have shape ``(C, ...)`` (or ``(...)`` for
        a 2-D image) and are zero where any tap falls outside the image.
    """
    img, flat = _as_channels(image)
    c = img.shape[0]
    valid, fu, fv, (i00, i01, i10, i11) = _bilinear_taps(img.shape[1:], uv)
    src = img.reshape(c, -1)
    w00 = (1 - fu) * (1 - fv)
    w01 = fu * (1 - fv)
    w10 = (1 - fu) * fv
    w11 = fu * fv
    out = src[:, i00] * w00 + src[:, i01] * w01 + src[:, i10] * w10 + src[:, i11] * w11
    out = np.where(valid, out, 0.0)
    return (out[0] if flat else out), valid


def sample_bilinear_grad(image, uv):
    """Analytic derivative of :func:`sample_bilinear` w.r.t. ``(u, v)``.

    The sampler is piecewise bilinear so the derivative is taken on the
    cell selected by ``floor``: right-continuous at interior tap
    boundaries, left-sided on the last row/column.

    Returns:
        Array of shape ``(C, ..., 2)`` (``(..., 2)`` for 2-D images);
        zero where the sample is invalid.
    """
    img, flat = _as_channels(image)
    c = img.shape[0]
    valid, fu, fv, (i00, i01, i10, i11) = _bilinear_taps(img.shape[1:], uv)
    src = img.reshape(c, -1)
    p00, p01, p10, p11 = src[:, i00], src[:, i01], src[:, i10], src[:, i11]
    du = (1 - fv) * (p01 - p00) + fv * (p11 - p10)
    dv = (1 - fu) * (p10 - p00) + fu * (p11 - p01)
    out = np.stack([np.where(valid, du, 0.0), np.where(valid, dv, 0.0)], axis=-1)
    return out[0] if flat else out


def taps_in_fov(intr, uv) -> np.ndarray:
    """True where every bilinear tap with non-zero weight lies inside the FoV circle."""
    inside, ok = sample_bilinear(intr.fov_mask().astype(np.float64), uv)
    return ok & (inside >= 1.0 - 1e-12)


@dataclass
class SweepVolume:
    """Source camera warped onto concentric spheres.

    Attributes:
        camera: 0-based camera index.
        values: ``N x C x Hf x Wf`` features; zero where invalid.
        valid: ``N x Hf x Wf`` mask.
    """

    camera: int
    values: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def sweep_warp(
    source,
    rig: CameraRig,
    camera: int,
    grid: ErpGrid,
    hyp: HypothesisSet,
    downsample: int = 1,
    indices=None,
    dtype=np.float64,
    origin=None,
) -> SweepVolume:
    """Warp one camera's image or feature map onto every hypothesis sphere.

    Args:
        source: ``C x H x W`` (or ``H x W``) image of camera ``camera``.
        rig: Camera rig.
        camera: 0-based camera index.
        grid: ERP grid of the output slices.
        hyp: Hypothesis set.
        downsample: Factor between the calibrated image and ``source``.
        indices: Optional subset of hypothesis indices to warp.
        dtype: Storage dtype of the output values.
        origin: Sphere center in rig coordinates (default: rig origin).

    Raises:
        ValueError: If ``source`` does not match the scaled intrinsics.
    """
    img, _ = _as_channels(source)
    cam = rig[camera]
    intr = cam.intrinsics.scaled(downsample)
    if tuple(img.shape[1:]) != intr.image_size:
        raise ValueError(
            f"source is {img.shape[1:]} but intrinsics at 1/{downsample} scale expect {intr.image_size}"
        )
    inv = hyp.inverse_depths
    if indices is not None:
        inv = inv[np.asarray(indices)]
    rotated = world_to_camera(grid.directions(), cam.extrinsics) - cam.extrinsics.translation
    t = cam.extrinsics.translation
    if origin is not None:
        t = world_to_camera(origin, cam.extrinsics)
    n = len(inv)
    values = np.zeros((n, img.shape[0]) + grid.shape, dtype=dtype)
    valid = np.zeros((n,) + grid.shape, dtype=bool)
    for k, q in enumerate(inv):
        uv, in_fov = project_fisheye(rotated / q + t, intr)
        vals, _ = sample_bilinear(img, uv)
        ok = in_fov & taps_in_fov(intr, uv)
        values[k] = np.where(ok, vals, 0.0)
        valid[k] = ok
    return SweepVolume(camera, values, valid)
