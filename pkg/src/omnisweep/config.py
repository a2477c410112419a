"""Default hyperparameters shared by the library and the CLI."""

NUM_HYPOTHESES = 32
D_MIN = 0.55  # meters
D_MAX = 1e5  # meters
OUTPUT_WIDTH = 640
OUTPUT_HEIGHT = 320

SSIM_ALPHA = 0.85
LOSS_WEIGHTS = (1.0, 2.0, 1.0)  # photometric, smoothness, gradient

FEATURE_SCALE = 4
SEAM_WIDTH = 2  # columns excluded on each side of a stitch seam

FISHEYE_FOV_DEG = 220.0
