"""Per-scene depth refinement by minimizing the pseudo-stereo loss.

The optimization variable is the inverse-depth field on the ERP grid.
Gradients are analytic: loss adjoints from :mod:`pseudo_stereo` are pulled
back through stitching, bilinear sampling and the fisheye projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import config
from .cost import PAIRS, band_mask
from .pseudo_stereo import (
    ALIGN_QUARTER_TURNS,
    LossBreakdown,
    _aligned,
    _views_from_inverse_depth,
    stitch_pair,
    total_loss_grad,
    yaw_rotate,
)
from .rig import CameraRig
from .sphere import ErpGrid, HypothesisSet, make_hypotheses

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    step_size: float = 1e-2
    max_iters: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tol: float = 1e-5
    tol_window: int = 10
    seam_width: int = config.SEAM_WIDTH
    alpha: float = config.SSIM_ALPHA
    loss_weights: tuple[float, float, float] = config.LOSS_WEIGHTS
    quarter_turns: int = ALIGN_QUARTER_TURNS
    hypotheses: HypothesisSet = field(
        default_factory=lambda: make_hypotheses(config.NUM_HYPOTHESES, config.D_MIN, config.D_MAX)
    )

    def __post_init__(self):
        if self.step_size < 0 or self.max_iters < 0 or self.tol < 0:
            raise ValueError("step size, iteration count and tolerance must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decays must lie in (0, 1)")

    @property
    def bounds(self) -> tuple[float, float]:
        """Inverse-depth box ``[1/d_max, 1/d_min]``."""
        return 1.0 / self.hypotheses.d_max, 1.0 / self.hypotheses.d_min


@dataclass
class RefineTrace:
    total: list[float]
    photometric: list[float]
    smoothness: list[float]
    gradient: list[float]
    inverse_depth: np.ndarray
    iterations: int
    reason: str

    def rows(self):
        for k, row in enumerate(zip(self.total, self.photometric, self.smoothness, self.gradient)):
            yield (k,) + row


def loss_and_gradient(fisheyes, rig: CameraRig, inv_depth, cfg: RefineConfig = RefineConfig()):
    """``L_total`` breakdown and its gradient w.r.t. every inverse-depth pixel.

    The absolute values in the losses use the ``sign(0) = 0`` subgradient;
    pixels outside every mask receive zero gradient.
    """
    q = np.asarray(inv_depth, dtype=np.float64)
    grid = ErpGrid(*q.shape)
    hyp = cfg.hypotheses
    views, masks, dv_dq = _views_from_inverse_depth(fisheyes, rig, q, grid, True)
    pair = stitch_pair(views, masks)
    disp = hyp.inverse_depth_to_index(q)
    report, g_first, g_second, g_disp = total_loss_grad(
        pair, disp, cfg.loss_weights, cfg.alpha, cfg.quarter_turns, cfg.seam_width
    )
    # undo the frame change of stitch_pair
    per_pair = (g_first, yaw_rotate(g_second, 1))
    w = q.shape[1]
    grad = g_disp * (-1.0 / hyp.step)
    for g, (a, b) in zip(per_pair, PAIRS):
        take = band_mask(w, a)
        grad += np.where(take, g * dv_dq[a], g * dv_dq[b])
    return report, grad


def loss_gradient(fisheyes, rig: CameraRig, inv_depth, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    return loss_and_gradient(fisheyes, rig, inv_depth, cfg)[1]


def refine(fisheyes, rig: CameraRig, init, cfg: RefineConfig = RefineConfig()) -> RefineTrace:
    """Adam descent on inverse depth with projection onto the hypothesis box.

    Stops after ``max_iters`` steps, when the relative change of
    ``L_total`` over ``tol_window`` iterations drops below ``tol``, or when
    the loss becomes non-finite.
    """
    lo, hi = cfg.bounds
    q = np.clip(np.array(init, dtype=np.float64), lo, hi)
    m = np.zeros_like(q)
    v = np.zeros_like(q)
    trace = RefineTrace([], [], [], [], q, 0, "max_iters")

    def record(rep: LossBreakdown):
        trace.total.append(rep.total)
        trace.photometric.append(rep.photometric)
        trace.smoothness.append(rep.smoothness)
        trace.gradient.append(rep.gradient)

    for it in range(cfg.max_iters):
        rep, g = loss_and_gradient(fisheyes, rig, q, cfg)
        if not np.isfinite(rep.total):
            trace.reason = "diverged"
            break
        record(rep)
        k = cfg.tol_window
        if len(trace.total) > k:
            prev = trace.total[-k - 1]
            if abs(prev - trace.total[-1]) < cfg.tol * abs(prev):
                trace.reason = "converged"
                break
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** (it + 1))
        v_hat = v / (1 - cfg.beta2 ** (it + 1))
        q = np.clip(q - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), lo, hi)
        trace.iterations = it + 1
        if it % 50 == 0:
            logger.debug("iter %d L_total %.6f", it, rep.total)
    else:
        rep, _ = loss_and_gradient(fisheyes, rig, q, cfg)
        record(rep)
    trace.inverse_depth = q
    return trace


def supervised_mask(fisheyes, rig: CameraRig, inv_depth, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Rig-frame pixels inside the joint loss mask at ``inv_depth``.

    Depth outside this mask (seam bands, pixels seen by one panorama only)
    receives no direct photometric evidence.
    """
    q = np.asarray(inv_depth, dtype=np.float64)
    grid = ErpGrid(*q.shape)
    views, masks, _ = _views_from_inverse_depth(fisheyes, rig, q, grid, False)
    pair = stitch_pair(views, masks)
    _, _, mask = _aligned(pair, cfg.quarter_turns, cfg.seam_width)
    return yaw_rotate(mask, -cfg.quarter_turns)
