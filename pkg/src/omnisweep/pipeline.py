"""End-to-end sweep stereo: fisheyes to a softargmin disparity map."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import config
from .cost import (
    CostVolume,
    DisparityMap,
    build_concat_volume,
    build_variance_volume,
    crop_and_stitch,
    gather_3x3,
    regularize,
    resize_erp,
    softargmin_regress,
)
from .features import FamWeights, extract_features, frequency_attention
from .rig import CameraRig
from .sphere import ErpGrid, HypothesisSet, make_hypotheses, sweep_warp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepConfig:
    """Knobs of the training-free matching pipeline.

    Attributes:
        feature_scale: Downsampling of fisheyes before feature extraction;
            the cost volume lives on the output grid divided by this factor.
        features: Channel set passed to :func:`extract_features`.
        fam: Optional frequency attention weights applied to every feature map.
        passes: Regularization passes.
        window: Regularization box size.
        temperature: Softargmin temperature. Costs of unit-variance
            features differ by about 0.1 between hypotheses, so a
            temperature of order 1 flattens the posterior.
        chunk: Hypotheses warped per batch (bounds peak memory).
    """

    feature_scale: int = config.FEATURE_SCALE
    features: str = "isotropic"
    fam: FamWeights | None = None
    passes: int = 3
    window: int = 3
    temperature: float = 1e-3
    chunk: int = 8


@dataclass
class SweepResult:
    disparity: DisparityMap
    cost: CostVolume
    valid: np.ndarray


def feature_maps(fisheyes, cfg: SweepConfig = SweepConfig()):
    maps = []
    for img in fisheyes:
        f = extract_features(img, cfg.feature_scale, kind=cfg.features)
        if cfg.fam is not None:
            f = frequency_attention(f, cfg.fam)
        maps.append(f)
    return maps


def cost_grid(out_grid: ErpGrid, scale: int) -> ErpGrid:
    if out_grid.height % scale or out_grid.width % (4 * scale):
        raise ValueError(f"output grid {out_grid.shape} is not divisible by feature scale {scale}")
    return ErpGrid(out_grid.height // scale, out_grid.width // scale)


def _sweeps(maps, rig, grid, hyp, scale, indices):
    return [sweep_warp(m.values, rig, i, grid, hyp, scale, indices) for i, m in enumerate(maps)]


def variance_cost(fisheyes, rig: CameraRig, out_grid: ErpGrid, hyp: HypothesisSet, cfg: SweepConfig = SweepConfig()):
    """Channel-averaged variance volume ``N x Hf x Wf`` and its joint mask.

    Hypotheses are processed in chunks; every stage is slice-local, so the
    result does not depend on the chunk size.
    """
    maps = feature_maps(fisheyes, cfg)
    grid = cost_grid(out_grid, cfg.feature_scale)
    vol = np.empty((hyp.count,) + grid.shape)
    valid = np.empty((hyp.count,) + grid.shape, dtype=bool)
    for start in range(0, hyp.count, cfg.chunk):
        idx = np.arange(start, min(start + cfg.chunk, hyp.count))
        p1, p2 = crop_and_stitch(_sweeps(maps, rig, grid, hyp, cfg.feature_scale, idx))
        cost = build_variance_volume(gather_3x3(p1), gather_3x3(p2))
        vol[idx] = cost.values.mean(axis=0)
        valid[idx] = cost.valid
        logger.debug("cost slices %d..%d done", idx[0], idx[-1])
    return CostVolume(vol[None], "variance", valid)


def concat_cost(fisheyes, rig: CameraRig, out_grid: ErpGrid, hyp: HypothesisSet, mode: str, cfg: SweepConfig = SweepConfig()):
    """Unreduced concat baseline volume (``"4C"`` or ``"2C"``)."""
    maps = feature_maps(fisheyes, cfg)
    grid = cost_grid(out_grid, cfg.feature_scale)
    return build_concat_volume(_sweeps(maps, rig, grid, hyp, cfg.feature_scale, None), mode)


def estimate_depth(
    fisheyes,
    rig: CameraRig,
    out_grid: ErpGrid | None = None,
    hyp: HypothesisSet | None = None,
    cfg: SweepConfig = SweepConfig(),
) -> SweepResult:
    """Features, spherical sweep, variance cost, regularization, softargmin.

    Returns:
        The disparity on ``out_grid`` together with the regularized cost and
        a mask of output pixels whose cost cells were jointly valid for at
        least one hypothesis.
    """
    out_grid = out_grid or ErpGrid(config.OUTPUT_HEIGHT, config.OUTPUT_WIDTH)
    hyp = hyp or make_hypotheses(config.NUM_HYPOTHESES, config.D_MIN, config.D_MAX)
    cost = variance_cost(fisheyes, rig, out_grid, hyp, cfg)
    reg = regularize(cost, None, cfg.passes, cfg.window, out_grid.shape)
    disp = softargmin_regress(reg, hyp, cfg.temperature)
    seen = resize_erp(cost.valid.any(axis=0).astype(np.float64), out_grid.shape) > 0.5
    return SweepResult(disp, reg, seen)
