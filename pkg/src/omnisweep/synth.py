"""Synthetic scenes with analytic depth for end-to-end checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .rig import CameraRig, unproject_fisheye
from .sphere import ErpGrid, spherical_point


@dataclass(frozen=True)
class Texture:
    """Procedural albedo in [0, 1]: soft 3D checker plus band-limited noise.

    The checker is ``tanh(sharpness * prod_k sin(pi x_k / period + phase_k))``
    with phases chosen so that planes at integer multiples of the period
    still carry a full-contrast 2D checker. The noise is a normalized sum
    of plane waves with seeded directions, wavelengths and phases.
    """

    checker_period: float = 0.25
    checker_amplitude: float = 0.45
    checker_sharpness: float = 2.0
    noise_amplitude: float = 0.45
    noise_wavelengths: tuple[float, float] = (0.1, 0.8)
    noise_components: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.checker_amplitude + self.noise_amplitude > 1.0:
            raise ValueError("texture amplitudes exceed the unit range")

    def _waves(self):
        rng = np.random.default_rng(self.seed)
        k = self.noise_components
        dirs = rng.normal(size=(k, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lo, hi = self.noise_wavelengths
        lam = np.exp(rng.uniform(math.log(lo), math.log(hi), size=k))
        phase = rng.uniform(0, 2 * math.pi, size=k)
        return dirs * (2 * math.pi / lam)[:, None], phase

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        phases = np.array([0.45, 0.55, 0.40]) * math.pi
        s = np.prod(np.sin(math.pi * p / self.checker_period + phases), axis=-1)
        checker = np.tanh(self.checker_sharpness * s) / math.tanh(self.checker_sharpness)
        value = 0.5 + 0.5 * self.checker_amplitude * checker
        if self.noise_amplitude > 0 and self.noise_components > 0:
            freqs, phase = self._waves()
            n = np.sin(p @ freqs.T + phase).sum(axis=-1) / math.sqrt(self.noise_components / 2.0)
            value = value + 0.5 * self.noise_amplitude * np.tanh(n)
        return value


@dataclass(frozen=True)
class SyntheticScene:
    """Closed scene around the rig center.

    ``kind="sphere"`` is a sphere of ``radius`` meters centered on the rig;
    ``kind="box"`` is an axis-aligned room of ``dims`` (x, y, z) meters
    centered on the rig.
    """

    kind: str = "box"
    radius: float = 2.0
    dims: tuple[float, float, float] = (4.0, 3.0, 4.0)
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown scene kind {self.kind!r}")

    @property
    def min_depth(self) -> float:
        if self.kind == "sphere":
            return self.radius
        return min(self.dims) / 2.0

    def intersect(self, origins, dirs) -> np.ndarray:
        """Ray parameter of the first hit for rays starting inside the scene."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        if self.kind == "sphere":
            b = np.sum(o * d, axis=-1)
            c = np.sum(o * o, axis=-1) - self.radius**2
            dd = np.sum(d * d, axis=-1)
            disc = b * b - dd * c
            assert np.all(disc >= 0), "ray misses the scene"
            return (-b + np.sqrt(disc)) / dd
        half = np.asarray(self.dims, dtype=np.float64) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d > 0, (half - o) / d, np.where(d < 0, (-half - o) / d, np.inf))
        t = t.min(axis=-1)
        assert np.all(np.isfinite(t)), "ray misses the scene"
        return t

    def depth(self, elevation, azimuth) -> np.ndarray:
        """Distance from the rig center along ``(elevation, azimuth)``."""
        dirs = spherical_point(elevation, azimuth, 1.0)
        return self.intersect(np.zeros_like(dirs), dirs)

    def depth_map(self, grid: ErpGrid) -> np.ndarray:
        return self.depth(grid.elevation[:, None], grid.azimuth[None, :])

    def radiance(self, points) -> np.ndarray:
        return self.texture(points)


def render_fisheye(scene: SyntheticScene, rig: CameraRig, camera: int, supersample: int = 1) -> np.ndarray:
    """Ray-trace one fisheye image; pixels outside the FoV are zero."""
    cam = rig[camera]
    intr = cam.intrinsics
    h, w = intr.image_size
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    vv, uu = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    center = cam.extrinsics.center
    rot = cam.extrinsics.rotation
    acc = np.zeros((h, w))
    for dv in offsets:
        for du in offsets:
            rays, valid = unproject_fisheye(np.stack([uu + du, vv + dv], axis=-1), intr)
            dirs = rays @ rot
            t = scene.intersect(np.broadcast_to(center, dirs.shape), dirs)
            shade = scene.radiance(center + dirs * t[..., None])
            acc += np.where(valid, shade, 0.0)
    img = acc / supersample**2
    _, center_valid = unproject_fisheye(np.stack([uu, vv], axis=-1), intr)
    return np.where(center_valid, img, 0.0)


def render_scene(
    scene: SyntheticScene,
    rig: CameraRig,
    grid: ErpGrid | None = None,
    supersample: int = 1,
):
    """Render the four fisheyes and the ground-truth ERP depth.

    Returns:
        ``(fisheyes, depth)``: a list of four ``H1 x W1`` images in [0, 1]
        and the depth from the rig center on ``grid`` (640 x 320 default).
    """
    if grid is None:
        grid = ErpGrid(config.OUTPUT_HEIGHT, config.OUTPUT_WIDTH)
    if scene.min_depth <= rig.max_baseline + 0.1:
        raise ValueError("scene surface is too close to the cameras")
    images = [render_fisheye(scene, rig, i, supersample) for i in range(4)]
    return images, scene.depth_map(grid)
