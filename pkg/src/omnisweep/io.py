"""Readers and writers: float maps, 8-bit images, point clouds, volumes."""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .sphere import ErpGrid, spherical_point

_MAX_DIM = 1 << 16
_VOLUME_MAGIC = b"OSVOL1\0\0"


# -- PFM --------------------------------------------------------------------


def write_pfm(path, data: np.ndarray) -> None:
    """Write a 1- or 3-channel float32 map, little-endian, bottom row first."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM stores H x W or H x W x 3 maps, got {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file; rows come back top row first.

    Raises:
        ValueError: On a malformed header, oversize dimensions or short data.
    """
    data = Path(path).read_bytes()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if m is None:
        raise ValueError("malformed PFM header")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    if not (0 < w <= _MAX_DIM and 0 < h <= _MAX_DIM):
        raise ValueError(f"PFM dimensions {w}x{h} out of range")
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise ValueError("malformed PFM scale") from exc
    if scale == 0:
        raise ValueError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    off = m.end()
    if len(data) - off < 4 * count:
        raise ValueError("PFM data is truncated")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return arr.reshape(shape)[::-1].astype(np.float32)


# -- 8-bit images -------------------------------------------------------------


def write_image(path, image: np.ndarray) -> None:
    """Save a [0, 1] grayscale or RGB array as an 8-bit image."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def read_image(path, gray: bool = True) -> np.ndarray:
    """Load an 8-bit image into [0, 1] floats."""
    with Image.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


# -- point clouds -------------------------------------------------------------


def export_pointcloud(path, depth, pano, grid: ErpGrid | None = None, mask=None) -> int:
    """Write one colored vertex per valid ERP pixel as binary little-endian PLY.

    Args:
        path: Output file.
        depth: ``H x W`` depth in meters from the rig center.
        pano: ``H x W`` grayscale or ``H x W x 3`` color in [0, 1].
        grid: ERP grid (derived from ``depth`` when omitted).
        mask: Optional pixel mask; non-finite or non-positive depths are
            always skipped.

    Returns:
        The number of vertices written.
    """
    depth = np.asarray(depth, dtype=np.float64)
    grid = grid or ErpGrid(*depth.shape)
    if depth.shape != grid.shape:
        raise ValueError("depth does not match the grid")
    color = np.asarray(pano, dtype=np.float64)
    if color.ndim == 2:
        color = np.repeat(color[..., None], 3, axis=2)
    if color.shape[:2] != depth.shape:
        raise ValueError("panorama does not match the depth map")
    keep = np.isfinite(depth) & (depth > 0)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    pts = spherical_point(grid.elevation[:, None], grid.azimuth[None, :], depth)[keep]
    rgb = np.round(np.clip(color[keep], 0, 1) * 255).astype(np.uint8)
    vertex = np.empty(len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                       ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    vertex["x"], vertex["y"], vertex["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    vertex["red"], vertex["green"], vertex["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vertex.tobytes())
    return len(pts)


def read_pointcloud(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a PLY written by :func:`export_pointcloud`; returns ``(xyz, rgb)``."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ValueError("not a PLY file")
    header = data[:end].decode("ascii")
    if "format binary_little_endian 1.0" not in header:
        raise ValueError("only binary little-endian PLY is supported")
    m = re.search(r"element vertex (\d+)", header)
    if m is None:
        raise ValueError("PLY header lacks a vertex element")
    n = int(m.group(1))
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    v = np.frombuffer(data, dtype=dt, count=n, offset=end + len(b"end_header\n"))
    xyz = np.stack([v["x"], v["y"], v["z"]], axis=1)
    rgb = np.stack([v["red"], v["green"], v["blue"]], axis=1)
    return xyz, rgb


# -- volumes ------------------------------------------------------------------


def save_volume(path, values: np.ndarray, kind: str, valid: np.ndarray | None = None) -> None:
    """Flat binary dump of a sweep or cost volume.

    Layout (little-endian): 8-byte magic, uint32 kind length and kind
    bytes, 8-byte dtype string, uint32 ndim, ndim x uint64 dims, row-major
    data, then a uint8 mask flag. When the flag is 1 it is followed by the
    mask's uint32 ndim, uint64 dims and one byte per cell.
    """
    arr = np.asarray(values)
    dtype = arr.dtype.newbyteorder("<")
    tag = kind.encode()
    header = _VOLUME_MAGIC + struct.pack("<I", len(tag)) + tag
    header += dtype.str.encode().ljust(8, b"\0") + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        if valid is None:
            fh.write(b"\0")
        else:
            mask = np.ascontiguousarray(valid, dtype=np.uint8)
            fh.write(b"\1" + struct.pack("<I", mask.ndim) + struct.pack(f"<{mask.ndim}Q", *mask.shape))
            fh.write(mask.tobytes())


def load_volume(path):
    """Inverse of :func:`save_volume`; returns ``(values, kind, valid)``."""
    data = Path(path).read_bytes()
    if data[:8] != _VOLUME_MAGIC:
        raise ValueError("not a volume file")
    off = 8
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    kind = data[off : off + n].decode()
    off += n
    dtype = np.dtype(data[off : off + 8].rstrip(b"\0").decode())
    off += 8
    (ndim,) = struct.unpack_from("<I", data, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    count = int(np.prod(shape))
    values = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape).copy()
    off += count * dtype.itemsize
    valid = None
    if data[off : off + 1] == b"\1":
        off += 1
        (mdim,) = struct.unpack_from("<I", data, off)
        off += 4
        mshape = struct.unpack_from(f"<{mdim}Q", data, off)
        off += 8 * mdim
        valid = np.frombuffer(data, dtype=np.uint8, count=int(np.prod(mshape)), offset=off).reshape(mshape).astype(bool)
    return values, kind, valid

