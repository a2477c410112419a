"""Depth-estimation error metrics in hypothesis-index units."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    """Per-pixel errors between predicted and reference hypothesis indices.

    Attributes:
        mae: Mean absolute error.
        rms: Root mean squared error.
        ratio_gt1: Percent of pixels with error above 1.
        ratio_gt3: Percent of pixels with error above 3.
        ratio_gt5: Percent of pixels with error above 5.
        pixels: Number of evaluated pixels.
    """

    mae: float
    rms: float
    ratio_gt1: float
    ratio_gt3: float
    ratio_gt5: float
    pixels: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        """Single-line ``key=value`` record."""
        return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.as_dict().items())


def compute_metrics(pred, gt, mask=None) -> MetricsReport:
    """Compare two index maps on the pixels where ``mask`` is set.

    Non-finite entries of either map are dropped from the mask.

    Raises:
        ValueError: On shape mismatch or when no pixel is left.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and reference {gt.shape} differ in shape")
    keep = np.isfinite(pred) & np.isfinite(gt)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    n = int(np.count_nonzero(keep))
    if n == 0:
        raise ValueError("no valid pixels to evaluate")
    err = np.abs(pred[keep] - gt[keep])
    mae = math.fsum(err) / n
    rms = math.sqrt(math.fsum(err * err) / n)
    # float rounding can place rms a hair below mae when all errors are equal
    rms = max(rms, mae)
    ratios = [100.0 * np.count_nonzero(err > t) / n for t in (1, 3, 5)]
    return MetricsReport(mae, rms, *ratios, pixels=n)
