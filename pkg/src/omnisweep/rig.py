"""Fisheye camera model, rig extrinsics and the world-to-pixel projection.

Conventions used everywhere in the package:

* Rig/world frame is right-handed with x forward (azimuth 0), y up and
  z right. Distances are meters, internal angles are radians.
* Camera frame follows the usual pinhole convention: z is the optical
  axis, x grows with the image column ``u`` and y with the image row ``v``.
* The lens is an equidistant fisheye whose radial profile is an odd
  polynomial ``r(theta) = k1*theta + k2*theta**3 + ...`` in pixels.
* Pixel centers sit at integer coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import config

CALIBRATION_VERSION = 1
MODEL_NAME = "equidistant_poly"

_ORTHO_TOL = 1e-9
_AXIS_SERIES_THETA = 1e-3


class CalibrationError(ValueError):
    """Raised when a calibration document is malformed or inconsistent."""


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Equidistant-polynomial fisheye intrinsics.

    Attributes:
        focal_poly: Odd-power coefficients ``(k1, k2, ...)`` of the radial
            profile, in pixels per radian**(2j-1).
        principal_point: ``(u0, v0)`` in pixels.
        image_size: ``(H1, W1)`` in pixels.
        fov_deg: Full field of view in degrees.
    """

    focal_poly: tuple[float, ...]
    principal_point: tuple[float, float]
    image_size: tuple[int, int]
    fov_deg: float = config.FISHEYE_FOV_DEG

    def __post_init__(self):
        object.__setattr__(self, "focal_poly", tuple(float(k) for k in self.focal_poly))
        object.__setattr__(self, "principal_point", tuple(float(p) for p in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if not self.focal_poly:
            raise ValueError("focal polynomial is empty")
        if not 0.0 < self.fov_deg < 360.0:
            raise ValueError(f"fov_deg must lie in (0, 360), got {self.fov_deg}")
        h, w = self.image_size
        u0, v0 = self.principal_point
        if h <= 0 or w <= 0:
            raise ValueError(f"invalid image size {self.image_size}")
        if not (0.0 <= u0 <= w - 1 and 0.0 <= v0 <= h - 1):
            raise ValueError("principal point lies outside the image")
        grid = np.deg2rad(np.arange(0.0, self.fov_deg / 2.0 + 1.0, 1.0))
        grid[-1] = min(grid[-1], self.half_fov)
        if not np.all(np.diff(self.radius(grid)) > 0):
            raise ValueError("focal polynomial is not monotone over the field of view")

    @property
    def half_fov(self) -> float:
        return math.radians(self.fov_deg) / 2.0

    def radius(self, theta):
        """Image radius in pixels for incidence angle ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        t2 = theta * theta
        out = np.zeros_like(theta)
        for k in reversed(self.focal_poly):
            out = out * t2 + k
        return out * theta

    def radius_derivative(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        t2 = theta * theta
        out = np.zeros_like(theta)
        for j in reversed(range(len(self.focal_poly))):
            out = out * t2 + (2 * j + 1) * self.focal_poly[j]
        return out

    def radius_over_theta(self, theta):
        """``r(theta) / theta``, finite at zero."""
        theta = np.asarray(theta, dtype=np.float64)
        t2 = theta * theta
        out = np.zeros_like(theta)
        for k in reversed(self.focal_poly):
            out = out * t2 + k
        return out

    def incidence_from_radius(self, radius, iters: int = 50):
        """Invert the radial profile by safeguarded Newton iterations.

        Radii beyond ``r(half_fov)`` are clamped to the FoV edge; callers
        decide validity from the radius itself.
        """
        radius = np.asarray(radius, dtype=np.float64)
        lo = np.zeros_like(radius)
        hi = np.full_like(radius, self.half_fov)
        target = np.minimum(radius, self.radius(self.half_fov))
        theta = np.clip(target / self.focal_poly[0], 0.0, self.half_fov)
        for _ in range(iters):
            f = self.radius(theta) - target
            lo = np.where(f < 0, theta, lo)
            hi = np.where(f > 0, theta, hi)
            step = theta - f / self.radius_derivative(theta)
            outside = (step <= lo) | (step >= hi)
            new = np.where(outside, 0.5 * (lo + hi), step)
            if np.all(np.abs(new - theta) < 1e-15):
                theta = new
                break
            theta = new
        return theta

    def fov_mask(self) -> np.ndarray:
        """Pixels whose center lies inside the image circle of the field of view."""
        h, w = self.image_size
        u0, v0 = self.principal_point
        radius = np.hypot(np.arange(w)[None, :] - u0, np.arange(h)[:, None] - v0)
        return radius <= self.radius(self.half_fov)

    def scaled(self, downsample: int) -> "FisheyeIntrinsics":
        """Intrinsics of the image box-downsampled by an integer factor.

        Pixel centers are kept aligned with the box filter, i.e.
        ``u' = (u + 0.5) / s - 0.5``.
        """
        if downsample == 1:
            return self
        s = float(downsample)
        h, w = self.image_size
        u0, v0 = self.principal_point
        return FisheyeIntrinsics(
            focal_poly=tuple(k / s for k in self.focal_poly),
            principal_point=((u0 + 0.5) / s - 0.5, (v0 + 0.5) / s - 0.5),
            image_size=(h // downsample, w // downsample),
            fov_deg=self.fov_deg,
        )


@dataclass(frozen=True)
class Extrinsics:
    """Rigid transform taking rig coordinates into a camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("non-orthonormal rotation")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("improper rotation")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in rig coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Camera:
    intrinsics: FisheyeIntrinsics
    extrinsics: Extrinsics


@dataclass(frozen=True)
class CameraRig:
    """Four fisheye cameras facing +x, +z, -x, -z of the rig frame.

    Cameras are stored 0-based here; camera ``i`` and ``i + 2`` are the
    back-to-back pairs.
    """

    cameras: tuple[Camera, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) != 4:
            raise ValueError(f"a rig needs exactly 4 cameras, got {len(self.cameras)}")
        for i, cam in enumerate(self.cameras):
            if abs(cam.extrinsics.center[1]) > 1e-6:
                raise ValueError(f"camera {i + 1} center is off the x-z plane")

    def __getitem__(self, i: int) -> Camera:
        return self.cameras[i]

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def max_baseline(self) -> float:
        return max(float(np.linalg.norm(c.extrinsics.translation)) for c in self.cameras)


def world_to_camera(points, ext: Extrinsics) -> np.ndarray:
    """Apply ``R @ P + T`` to points of shape ``(..., 3)``."""
    points = np.asarray(points, dtype=np.float64)
    return points @ ext.rotation.T + ext.translation


def project_fisheye(p_cam, intr: FisheyeIntrinsics):
    """Project camera-frame points to fisheye pixels.

    Args:
        p_cam: Points of shape ``(..., 3)`` in the camera frame.
        intr: Lens intrinsics.

    Returns:
        ``(uv, valid)`` with ``uv`` of shape ``(..., 2)`` and ``valid`` true
        where the incidence angle is within half the field of view.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    theta = np.arctan2(rho, z)
    # r/rho written as (r/theta)*(theta/rho) stays finite on the axis
    with np.errstate(invalid="ignore", divide="ignore"):
        theta_over_rho = np.where(rho > 0, theta / np.where(rho > 0, rho, 1.0), 1.0 / z)
        scale = intr.radius_over_theta(theta) * theta_over_rho
        u0, v0 = intr.principal_point
        uv = np.stack([u0 + scale * x, v0 + scale * y], axis=-1)
    nonzero = (rho > 0) | (z > 0)
    valid = nonzero & (theta <= intr.half_fov)
    uv = np.where(nonzero[..., None], uv, np.nan)
    return uv, valid


def project_fisheye_jacobian(p_cam, intr: FisheyeIntrinsics) -> np.ndarray:
    """Jacobian ``d(u, v) / d(P_cam)`` of shape ``(..., 2, 3)``.

    With ``h = r(theta) / rho`` the projection is ``u = u0 + h x``,
    ``v = v0 + h y`` and

        grad h = b * (x, y, 0) - r'(theta) / |P|^2 * e_z,
        b = (r'(theta) sin(theta) cos(theta) - r(theta)) / rho^3.

    ``b`` is replaced by its series limit near the optical axis, where it
    tends to ``(2 k2 - 2 k1 / 3) / |P|^3``.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    n2 = x * x + y * y + z * z
    n = np.sqrt(n2)
    theta = np.arctan2(rho, z)
    r = intr.radius(theta)
    dr = intr.radius_derivative(theta)
    safe_rho = np.where(rho > 0, rho, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta_over_rho = np.where(rho > 0, theta / safe_rho, 1.0 / z)
        h = intr.radius_over_theta(theta) * theta_over_rho
        b_direct = (dr * np.sin(theta) * np.cos(theta) - r) / safe_rho**3
    k = intr.focal_poly
    k2 = k[1] if len(k) > 1 else 0.0
    b_series = (2.0 * k2 - 2.0 * k[0] / 3.0) / (n2 * n)
    b = np.where(theta > _AXIS_SERIES_THETA, b_direct, b_series)
    dz = -dr / n2
    jac = np.empty(p.shape[:-1] + (2, 3))
    jac[..., 0, 0] = h + x * x * b
    jac[..., 0, 1] = x * y * b
    jac[..., 0, 2] = x * dz
    jac[..., 1, 0] = x * y * b
    jac[..., 1, 1] = h + y * y * b
    jac[..., 1, 2] = y * dz
    return jac


def unproject_fisheye(uv, intr: FisheyeIntrinsics):
    """Back-project pixels to unit rays in the camera frame.

    Returns:
        ``(rays, valid)`` where ``valid`` marks pixels inside the image
        circle of the field of view.
    """
    uv = np.asarray(uv, dtype=np.float64)
    u0, v0 = intr.principal_point
    du = uv[..., 0] - u0
    dv = uv[..., 1] - v0
    radius = np.hypot(du, dv)
    theta = intr.incidence_from_radius(radius)
    valid = radius <= intr.radius(intr.half_fov)
    safe = np.where(radius > 0, radius, 1.0)
    s = np.sin(theta)
    rays = np.stack(
        [np.where(radius > 0, s * du / safe, 0.0), np.where(radius > 0, s * dv / safe, 0.0), np.cos(theta)],
        axis=-1,
    )
    return rays, valid


def yaw_facing_rotation(azimuth: float) -> np.ndarray:
    """World-to-camera rotation for a camera looking along ``azimuth``.

    Image rows run downward (-y world); image columns run to the right.
    """
    fwd = np.array([math.cos(azimuth), 0.0, math.sin(azimuth)])
    down = np.array([0.0, -1.0, 0.0])
    right = np.cross(down, fwd)
    return np.stack([right, down, fwd])


def make_rig(
    baseline: float = 0.2,
    image_size: tuple[int, int] = (400, 400),
    fov_deg: float = config.FISHEYE_FOV_DEG,
    focal_poly: tuple[float, ...] | None = None,
) -> CameraRig:
    """Standard rig: camera ``i`` faces azimuth ``i * 90`` degrees and sits
    ``baseline`` meters from the rig center along its optical axis.

    When ``focal_poly`` is omitted the image circle of the FoV is fitted
    one pixel inside the shorter image side.
    """
    h, w = image_size
    principal = ((w - 1) / 2.0, (h - 1) / 2.0)
    if focal_poly is None:
        k1 = (min(h, w) / 2.0 - 2.0) / math.radians(fov_deg / 2.0)
        focal_poly = (k1,)
    intr = FisheyeIntrinsics(focal_poly, principal, image_size, fov_deg)
    cams = []
    for i in range(4):
        az = i * math.pi / 2.0
        rot = yaw_facing_rotation(az)
        center = baseline * np.array([math.cos(az), 0.0, math.sin(az)])
        cams.append(Camera(intr, Extrinsics(rot, -rot @ center)))
    return CameraRig(tuple(cams))


def _quat_wxyz_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError("quaternion must have 4 components (w, x, y, z)")
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ValueError("non-unit rotation quaternion")
    return Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()


def _matrix_to_quat_wxyz(r: np.ndarray) -> list[float]:
    x, y, z, w = Rotation.from_matrix(r).as_quat()
    return [float(w), float(x), float(y), float(z)]


def load_rig(calibration_text: str) -> CameraRig:
    """Parse a JSON calibration document into a validated rig.

    Each camera entry holds ``rotation_quaternion`` (w, x, y, z) or a
    ``rotation_matrix`` (row-major 3x3), ``translation_m``, ``focal_poly``,
    ``principal_point_px``, ``image_size`` (H, W) and ``fov_deg``. A
    top-level ``version`` is mandatory.

    Raises:
        CalibrationError: with the 1-based camera index where relevant.
    """
    try:
        doc = json.loads(calibration_text)
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"calibration parse failure: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CalibrationError("calibration document lacks a version field")
    if doc["version"] != CALIBRATION_VERSION:
        raise CalibrationError(f"unsupported calibration version {doc['version']!r}")
    model = doc.get("model", MODEL_NAME)
    if model != MODEL_NAME:
        raise CalibrationError(f"unsupported camera model {model!r}")
    entries = doc.get("cameras")
    if not isinstance(entries, list) or len(entries) != 4:
        raise CalibrationError("calibration must list exactly 4 cameras")

    cams = []
    for idx, entry in enumerate(entries, start=1):
        try:
            if "rotation_matrix" in entry:
                rot = np.asarray(entry["rotation_matrix"], dtype=np.float64).reshape(3, 3)
            else:
                rot = _quat_wxyz_to_matrix(entry["rotation_quaternion"])
            ext = Extrinsics(rot, entry["translation_m"])
            intr = FisheyeIntrinsics(
                focal_poly=tuple(entry["focal_poly"]),
                principal_point=tuple(entry["principal_point_px"]),
                image_size=tuple(entry["image_size"]),
                fov_deg=float(entry["fov_deg"]),
            )
        except KeyError as exc:
            raise CalibrationError(f"missing key {exc.args[0]!r}, camera {idx}") from exc
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"{exc}, camera {idx}") from exc
        cams.append(Camera(intr, ext))
    try:
        return CameraRig(tuple(cams))
    except ValueError as exc:
        raise CalibrationError(str(exc)) from exc


def dump_rig(rig: CameraRig) -> str:
    entries = []
    for cam in rig.cameras:
        intr, ext = cam.intrinsics, cam.extrinsics
        entries.append(
            {
                "rotation_quaternion": _matrix_to_quat_wxyz(ext.rotation),
                "translation_m": [float(t) for t in ext.translation],
                "focal_poly": list(intr.focal_poly),
                "principal_point_px": list(intr.principal_point),
                "image_size": list(intr.image_size),
                "fov_deg": intr.fov_deg,
            }
        )
    return json.dumps({"version": CALIBRATION_VERSION, "model": MODEL_NAME, "cameras": entries}, indent=2)


def load_rig_file(path) -> CameraRig:
    return load_rig(Path(path).read_text())


def save_rig_file(rig: CameraRig, path) -> None:
    Path(path).write_text(dump_rig(rig) + "\n")
