"""Omnidirectional depth from four fisheye cameras.

Spherical sweeping over inverse-depth hypotheses, a variance cost volume
with soft-argmin regression, and pseudo-stereo photometric supervision
used for per-scene depth refinement.
"""

from .cost import DisparityMap, build_variance_volume, crop_and_stitch, regularize, softargmin_regress
from .features import FamWeights, default_fam_weights, extract_features, frequency_attention
from .metrics import MetricsReport, compute_metrics
from .pipeline import SweepConfig, estimate_depth
from .pseudo_stereo import LossBreakdown, PanoramaPair, project_to_center, stitch_pair, total_loss, yaw_rotate
from .refine import RefineConfig, RefineTrace, loss_gradient, refine
from .rig import CameraRig, load_rig, make_rig, project_fisheye, world_to_camera
from .sphere import ErpGrid, HypothesisSet, make_hypotheses, sample_bilinear, spherical_point, sweep_warp
from .synth import SyntheticScene, render_scene

__version__ = "0.1.0"

__all__ = [
    "CameraRig", "DisparityMap", "ErpGrid", "FamWeights", "HypothesisSet", "LossBreakdown", "MetricsReport",
    "PanoramaPair", "RefineConfig", "RefineTrace", "SweepConfig", "SyntheticScene", "build_variance_volume",
    "compute_metrics", "crop_and_stitch", "default_fam_weights", "estimate_depth", "extract_features",
    "frequency_attention", "load_rig", "loss_gradient", "make_hypotheses", "make_rig", "project_fisheye",
    "project_to_center", "refine", "regularize", "render_scene", "sample_bilinear", "softargmin_regress",
    "spherical_point", "stitch_pair", "sweep_warp", "total_loss", "world_to_camera", "yaw_rotate",
]
