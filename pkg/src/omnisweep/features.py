"""Fixed descriptive feature channels and the frequency attention gate."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

from . import config

_FAM_MAGIC = b"FAMW"
_STD_EPS = 1e-6


@dataclass
class FeatureMap:
    """``C x Hf x Wf`` features at ``1/scale`` of the source resolution."""

    values: np.ndarray
    scale: int = config.FEATURE_SCALE

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise ValueError(f"feature scale must be 1, 2 or 4, got {self.scale}")
        if self.values.ndim != 3:
            raise ValueError("feature values must be C x H x W")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass
class FamWeights:
    """Attention convolution ``2 x k x k`` (avg-pool, max-pool inputs) and bias."""

    kernel: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        if self.kernel.ndim != 3 or self.kernel.shape[0] != 2:
            raise ValueError("attention kernel must have shape 2 x k x k")
        kh, kw = self.kernel.shape[1:]
        if kh != kw or kh % 2 == 0:
            raise ValueError("attention kernel must be square with odd size")
        if not (np.all(np.isfinite(self.kernel)) and np.isfinite(self.bias)):
            raise ValueError("attention weights must be finite")
        self.bias = float(self.bias)

    @property
    def size(self) -> int:
        return self.kernel.shape[1]


def box_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return np.asarray(image, dtype=np.float64)
    h, w = image.shape
    h2, w2 = h // factor, w // factor
    crop = np.asarray(image[: h2 * factor, : w2 * factor], dtype=np.float64)
    return crop.reshape(h2, factor, w2, factor).mean(axis=(1, 3))


FEATURE_KINDS = ("oriented", "isotropic")


def extract_features(
    image, scale: int = config.FEATURE_SCALE, standardize: bool = True, kind: str = "oriented"
) -> FeatureMap:
    """Four fixed descriptive channels on the box-downsampled intensity.

    ``kind="oriented"``: intensity, d/du, d/dv and 3x3 local std.
    ``kind="isotropic"``: intensity, gradient magnitude, Laplacian and 3x3
    local std. The isotropic set is unchanged by an in-plane rotation of
    the image, which matters when cameras rolled against each other must
    produce comparable features (e.g. near the poles of the sphere).

    With ``standardize`` every channel is shifted to zero mean and scaled
    to unit variance; channels with std below 1e-6 are only centered.
    """
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("extract_features expects a grayscale H x W image")
    small = box_downsample(img, scale)
    mean = ndimage.uniform_filter(small, 3, mode="nearest")
    sq = ndimage.uniform_filter(small * small, 3, mode="nearest")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    gy, gx = np.gradient(small)
    if kind == "oriented":
        values = np.stack([small, gx, gy, std])
    else:
        lap = ndimage.laplace(small, mode="nearest")
        values = np.stack([small, np.hypot(gx, gy), lap, std])
    if standardize:
        values = values - values.mean(axis=(1, 2), keepdims=True)
        sd = values.std(axis=(1, 2), keepdims=True)
        values = values / np.where(sd > _STD_EPS, sd, 1.0)
    return FeatureMap(values, scale)


def _hermitian_mirror(gate: np.ndarray) -> np.ndarray:
    """Copy the gate of the canonical half-spectrum onto the conjugate bins.

    Guarantees ``gate[k] == gate[-k]`` so that the gated spectrum of a real
    signal stays Hermitian.
    """
    h, w = gate.shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    mirrored = gate[(-rows) % h, (-cols) % w]
    self_conj_col = (cols == 0) | ((w % 2 == 0) & (cols == w // 2))
    canonical = (cols > 0) & (cols < (w + 1) // 2)
    canonical = canonical | (self_conj_col & (rows <= h // 2))
    return np.where(canonical, gate, mirrored)


def fam_gate(values: np.ndarray, weights: FamWeights) -> np.ndarray:
    """Frequency attention map ``A`` (Hf x Wf, unshifted FFT layout)."""
    spec = np.fft.fft2(values, axes=(-2, -1), norm="ortho")
    return _gate_from_spectrum(spec, weights)


def _gate_from_spectrum(spec: np.ndarray, weights: FamWeights) -> np.ndarray:
    mag = np.abs(spec)
    pooled = (mag.mean(axis=0), mag.max(axis=0))
    # frequency plane is periodic, so the convolution wraps
    logits = weights.bias + sum(
        ndimage.correlate(p, weights.kernel[c], mode="wrap") for c, p in enumerate(pooled)
    )
    return _hermitian_mirror(expit(logits))


def _fam_complex(f: FeatureMap, weights: FamWeights) -> np.ndarray:
    spec = np.fft.fft2(f.values, axes=(-2, -1), norm="ortho")
    gate = _gate_from_spectrum(spec, weights)
    return np.fft.ifft2(spec * gate, axes=(-2, -1), norm="ortho")


def frequency_attention(f: FeatureMap, weights: FamWeights) -> FeatureMap:
    """Gate the Fourier spectrum of every channel with a shared attention map.

    The spectrum magnitudes are pooled across channels (mean and max at
    each frequency bin), convolved into one logit map, passed through a
    sigmoid and multiplied onto the complex spectrum before the inverse
    transform.
    """
    h, w = f.values.shape[1:]
    if h < weights.size or w < weights.size:
        raise ValueError(f"feature map {h}x{w} is smaller than the {weights.size}x{weights.size} kernel")
    out = _fam_complex(f, weights)
    return FeatureMap(out.real.copy(), f.scale)


def default_fam_weights(size: int = 7) -> FamWeights:
    """Low-pass-emphasizing fixture: Gaussian kernel (sigma 1.5) with total
    weight 0.05 per pooled channel and bias +1."""
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5**2))
    g = 0.05 * g / g.sum()
    return FamWeights(np.stack([g, g]), 1.0)


def save_fam_weights(weights: FamWeights, path) -> None:
    kernel = np.ascontiguousarray(weights.kernel, dtype="<f8")
    header = _FAM_MAGIC + struct.pack("<I", kernel.ndim) + struct.pack(f"<{kernel.ndim}I", *kernel.shape)
    header += b"<f8".ljust(8, b"\0")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(kernel.tobytes(order="C"))
        fh.write(np.array([weights.bias], dtype="<f8").tobytes())


def load_fam_weights(path) -> FamWeights:
    data = Path(path).read_bytes()
    if data[:4] != _FAM_MAGIC:
        raise ValueError("not a FAM weight file")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    dtype = np.dtype(data[off : off + 8].rstrip(b"\0").decode())
    off += 8
    count = int(np.prod(shape))
    kernel = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape)
    bias = np.frombuffer(data, dtype=dtype, count=1, offset=off + count * dtype.itemsize)[0]
    return FamWeights(kernel.astype(np.float64), float(bias))
