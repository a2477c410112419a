"""Panoramic feature volumes, matching costs and soft-argmin regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .sphere import HypothesisSet, SweepVolume

COST_KINDS = ("variance", "concat4C", "concat2C", "regularized")

# back-to-back pairs, 0-based camera indices
PAIRS = ((0, 2), (1, 3))


def band_columns(width: int, camera: int) -> np.ndarray:
    """Columns of the 180 deg azimuth band centered on camera ``camera``'s axis.

    Camera ``i`` faces azimuth ``i * 90`` deg; the band is half-open,
    ``[axis - 90, axis + 90)``, and has exactly ``width / 2`` columns.
    """
    if width % 4:
        raise ValueError(f"ERP width must be divisible by 4, got {width}")
    center = width // 2 + camera * (width // 4)
    return (center - width // 4 + np.arange(width // 2)) % width


def band_mask(width: int, camera: int) -> np.ndarray:
    mask = np.zeros(width, dtype=bool)
    mask[band_columns(width, camera)] = True
    return mask


def column_owner(width: int, pair: tuple[int, int]) -> np.ndarray:
    """Camera index owning each column of the panorama stitched from ``pair``."""
    return np.where(band_mask(width, pair[0]), pair[0], pair[1])


@dataclass
class PanoFeatureVolume:
    """``C x N x Hf x Wf`` features stitched from one back-to-back pair."""

    values: np.ndarray
    valid: np.ndarray
    pair: tuple[int, int]

    @property
    def owner(self) -> np.ndarray:
        return column_owner(self.values.shape[-1], self.pair)


@dataclass
class CostVolume:
    """Matching cost ``C x N x Hf x Wf`` (or ``1 x N x H x W`` once regularized)."""

    values: np.ndarray
    kind: str
    valid: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    @property
    def element_count(self) -> int:
        return int(self.values.size)


@dataclass
class DisparityMap:
    """Continuous hypothesis index per ERP pixel."""

    values: np.ndarray
    hypotheses: HypothesisSet
    probabilities: np.ndarray | None = field(default=None, repr=False)

    @property
    def inverse_depth(self) -> np.ndarray:
        return self.hypotheses.index_to_inverse_depth(self.values)

    @property
    def depth(self) -> np.ndarray:
        return 1.0 / self.inverse_depth


def _stitch(a: np.ndarray, b: np.ndarray, cam_a: int) -> np.ndarray:
    take_a = band_mask(a.shape[-1], cam_a)
    return np.where(take_a, a, b)


def crop_and_stitch(sweeps) -> tuple[PanoFeatureVolume, PanoFeatureVolume]:
    """Stitch cameras (1, 3) and (2, 4) into two 360 deg feature volumes.

    Args:
        sweeps: Four :class:`SweepVolume` objects ordered by camera.

    Returns:
        Two volumes laid out ``C x N x Hf x Wf`` in the rig frame.
    """
    sweeps = list(sweeps)
    if len(sweeps) != 4:
        raise ValueError("crop_and_stitch needs four sweep volumes")
    shape = sweeps[0].values.shape
    for s in sweeps:
        if s.values.shape != shape or s.valid.shape != sweeps[0].valid.shape:
            raise ValueError("sweep volumes differ in shape")
    out = []
    for a, b in PAIRS:
        values = _stitch(sweeps[a].values, sweeps[b].values, a)
        valid = _stitch(sweeps[a].valid, sweeps[b].valid, a)
        out.append(PanoFeatureVolume(np.moveaxis(values, 1, 0), valid, (a, b)))
    return out[0], out[1]


def _row_index(h: int, offset: int) -> np.ndarray:
    return np.clip(np.arange(h) + offset, 0, h - 1)


def _erode3x3(valid: np.ndarray) -> np.ndarray:
    h = valid.shape[-2]
    out = valid.copy()
    for dy in (-1, 0, 1):
        rows = valid[..., _row_index(h, dy), :]
        for dx in (-1, 0, 1):
            out &= np.roll(rows, -dx, axis=-1)
    return out


def default_gather_kernel(channels: int) -> np.ndarray:
    """Per-channel 3x3 mean, no channel mixing."""
    k = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        k[c, c] = 1.0 / 9.0
    return k


def gather_3x3(v: PanoFeatureVolume, kernel: np.ndarray | None = None) -> PanoFeatureVolume:
    """3x3 convolution of every hypothesis slice.

    Padding wraps in azimuth and clamps in elevation; the validity mask is
    eroded so that only cells with a fully valid neighborhood survive.
    """
    c, n, h, w = v.values.shape
    if kernel is None:
        kernel = default_gather_kernel(c)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (c, c, 3, 3):
        raise ValueError(f"kernel must be {c}x{c}x3x3")
    out = np.zeros(v.values.shape, dtype=np.result_type(v.values.dtype, np.float32))
    for dy in (-1, 0, 1):
        rows = v.values[:, :, _row_index(h, dy), :]
        for dx in (-1, 0, 1):
            mix = kernel[:, :, dy + 1, dx + 1]
            if not np.any(mix):
                continue
            shifted = np.roll(rows, -dx, axis=-1)
            if np.count_nonzero(mix - np.diag(np.diag(mix))) == 0:
                out += np.diag(mix)[:, None, None, None].astype(out.dtype) * shifted
            else:
                out += np.einsum("oi,inhw->onhw", mix, shifted).astype(out.dtype)
    return PanoFeatureVolume(out, _erode3x3(v.valid), v.pair)


def build_variance_volume(v1: PanoFeatureVolume, v2: PanoFeatureVolume) -> CostVolume:
    """Two-sample variance of the stitched volumes.

    Cells not valid in both inputs take the largest valid cost of their
    ``(channel, hypothesis)`` slice so they never win the regression.
    """
    if v1.values.shape != v2.values.shape:
        raise ValueError("variance inputs differ in shape")
    a, b = v1.values, v2.values
    mean = (a + b) / 2
    var = ((a - mean) ** 2 + (b - mean) ** 2) / 2
    joint = v1.valid & v2.valid
    if not joint.all():
        masked = np.where(joint[None], var, -np.inf)
        fill = masked.max(axis=(2, 3), keepdims=True)
        fallback = masked.max() if np.isfinite(masked.max()) else 0.0
        fill = np.where(np.isfinite(fill), fill, fallback)
        var = np.where(joint[None], var, fill)
    return CostVolume(var, "variance", joint)


def build_concat_volume(sweeps, mode: str) -> CostVolume:
    """Concatenation baselines.

    ``"4C"`` stacks all four uncropped sweeps; ``"2C"`` crops to 180 deg,
    stitches the two pairs and interleaves their channels.
    """
    sweeps = list(sweeps)
    if mode == "4C":
        values = np.concatenate([np.moveaxis(s.values, 1, 0) for s in sweeps], axis=0)
        valid = np.logical_and.reduce([s.valid for s in sweeps])
        return CostVolume(values, "concat4C", valid)
    if mode == "2C":
        p1, p2 = crop_and_stitch(sweeps)
        c = p1.values.shape[0]
        values = np.empty((2 * c,) + p1.values.shape[1:], dtype=p1.values.dtype)
        values[0::2] = p1.values
        values[1::2] = p2.values
        return CostVolume(values, "concat2C", p1.valid & p2.valid)
    raise ValueError(f"unknown concat mode {mode!r}")


def resize_erp(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear ERP resampling over the last two axes.

    Pixel centers are aligned; azimuth wraps, elevation clamps.
    """
    h0, w0 = x.shape[-2:]
    h, w = shape
    if (h0, w0) == (h, w):
        return x.copy()
    ys = np.clip((np.arange(h) + 0.5) * h0 / h - 0.5, 0, h0 - 1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h0 - 2, 0))
    fy = ys - y0
    y1 = np.minimum(y0 + 1, h0 - 1)
    xs = (np.arange(w) + 0.5) * w0 / w - 0.5
    x0 = np.floor(xs).astype(np.intp)
    fx = xs - x0
    x1 = (x0 + 1) % w0
    x0 = x0 % w0
    rows = x[..., y0, :] * (1 - fy)[:, None] + x[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def _edge_weights(guide: np.ndarray, sigma: float):
    """Neighbor affinities ``exp(-|dI| / sigma)`` toward +u and +v."""
    wx = np.exp(-np.abs(np.roll(guide, -1, axis=-1) - guide) / sigma)
    wy = np.exp(-np.abs(guide[1:] - guide[:-1]) / sigma)
    return wx, wy


def _edge_aware_pass(vol: np.ndarray, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    # horizontal: neighbors j-1 and j+1 with affinities wx[j-1], wx[j]
    left = np.roll(wx, 1, axis=-1)
    num = vol + wx * np.roll(vol, -1, axis=-1) + left * np.roll(vol, 1, axis=-1)
    vol = num / (1.0 + wx + left)
    # vertical: rows beyond the poles are dropped, not clamped
    up = np.zeros(vol.shape[-2:])
    down = np.zeros(vol.shape[-2:])
    down[:-1] = wy
    up[1:] = wy
    num = vol.copy()
    num[..., :-1, :] += down[:-1] * vol[..., 1:, :]
    num[..., 1:, :] += up[1:] * vol[..., :-1, :]
    return num / (1.0 + up + down)


def regularize(
    cost: CostVolume,
    guide: np.ndarray | None = None,
    passes: int = 2,
    window: int = 3,
    out_shape: tuple[int, int] | None = None,
    edge_sigma: float = 0.1,
) -> CostVolume:
    """Training-free stand-in for the 3D codec.

    Reduces channels by their mean, runs ``passes`` separable box filters
    over (hypothesis, elevation, azimuth) with wrap-around in azimuth and
    finally resamples each slice to ``out_shape``. With a ``guide`` image
    on the cost grid, the spatial part of each pass uses edge-aware
    neighbor weights instead of the plain box.
    """
    if cost.kind != "variance":
        raise ValueError(f"regularize expects a variance volume, got {cost.kind!r}")
    vol = cost.values.mean(axis=0)
    if guide is not None:
        guide = np.asarray(guide, dtype=np.float64)
        if guide.shape != vol.shape[-2:]:
            guide = resize_erp(guide, vol.shape[-2:])
        wx, wy = _edge_weights(guide, edge_sigma)
    for _ in range(passes):
        vol = ndimage.uniform_filter1d(vol, window, axis=0, mode="nearest")
        if guide is None:
            vol = ndimage.uniform_filter1d(vol, window, axis=1, mode="nearest")
            vol = ndimage.uniform_filter1d(vol, window, axis=2, mode="wrap")
        else:
            vol = _edge_aware_pass(vol, wx, wy)
    if out_shape is not None:
        vol = resize_erp(vol, out_shape)
    return CostVolume(vol[None], "regularized")


def softmax_over_hypotheses(v_star: np.ndarray, temperature: float) -> np.ndarray:
    logits = -np.asarray(v_star, dtype=np.float64) / temperature
    logits = logits - logits.max(axis=0, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=0, keepdims=True)


def softargmin_regress(
    v_star: CostVolume, hypotheses: HypothesisSet, temperature: float = 1.0
) -> DisparityMap:
    """Expected hypothesis index under ``softmax(-V* / temperature)``.

    The cost is a dissimilarity, hence the negation.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    vol = v_star.values
    if vol.ndim == 4:
        if vol.shape[0] != 1:
            raise ValueError("softargmin needs a single-channel volume")
        vol = vol[0]
    if vol.shape[0] != hypotheses.count:
        raise ValueError(f"volume has {vol.shape[0]} hypotheses, expected {hypotheses.count}")
    if not np.all(np.isfinite(vol)):
        raise ValueError("cost volume contains non-finite values")
    p = softmax_over_hypotheses(vol, temperature)
    idx = np.arange(vol.shape[0], dtype=np.float64)
    d = np.tensordot(idx, p, axes=(0, 0))
    return DisparityMap(np.clip(d, 0.0, vol.shape[0] - 1), hypotheses, p)


def argmin_index(v_star: CostVolume) -> np.ndarray:
    """Hard argmin over hypotheses; ties go to the smaller index."""
    vol = v_star.values[0] if v_star.values.ndim == 4 else v_star.values
    return np.argmin(vol, axis=0)
