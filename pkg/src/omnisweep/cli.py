"""Command-line entry point: ``omnisweep <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config
from .cost import CostVolume, regularize, softargmin_regress
from .io import (
    export_pointcloud,
    load_volume,
    read_image,
    read_pfm,
    save_volume,
    write_image,
    write_pfm,
)
from .metrics import compute_metrics
from .pipeline import SweepConfig, concat_cost, estimate_depth, variance_cost
from .pseudo_stereo import project_to_center, stitch_pair, total_loss
from .refine import RefineConfig, refine
from .rig import load_rig_file, make_rig, save_rig_file
from .sphere import ErpGrid, make_hypotheses
from .synth import SyntheticScene, render_scene

logger = logging.getLogger("omnisweep")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 640x320, got {text!r}") from exc
    if w <= 0 or h <= 0 or w % 4:
        raise argparse.ArgumentTypeError("size must be positive with width divisible by 4")
    return w, h


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--calib", type=Path, help="rig calibration file (JSON)")
    p.add_argument("--size", type=_size, default=(config.OUTPUT_WIDTH, config.OUTPUT_HEIGHT),
                   help="output ERP size WxH (default %(default)s)")
    p.add_argument("--hypotheses", type=int, default=config.NUM_HYPOTHESES)
    p.add_argument("--dmin", type=float, default=config.D_MIN)
    p.add_argument("--dmax", type=float, default=config.D_MAX)
    p.add_argument("--seam-width", type=int, default=config.SEAM_WIDTH)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _grid(args) -> ErpGrid:
    w, h = args.size
    return ErpGrid(h, w)


def _hyp(args):
    return make_hypotheses(args.hypotheses, args.dmin, args.dmax)


def _rig(args):
    if args.calib is None:
        raise SystemExit("--calib is required for this command")
    return load_rig_file(args.calib)


def _load_map(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pfm":
        return read_pfm(path).astype(np.float64)
    return read_image(path)


def _fisheyes(paths) -> list[np.ndarray]:
    if len(paths) != 4:
        raise SystemExit("exactly four fisheye images are required")
    return [_load_map(Path(p)) for p in paths]


def _sweep_cfg(args) -> SweepConfig:
    return SweepConfig(feature_scale=args.feature_scale, temperature=args.temperature, passes=args.passes)


def _add_sweep_flags(p):
    p.add_argument("--feature-scale", type=int, default=config.FEATURE_SCALE, choices=(1, 2, 4))
    p.add_argument("--temperature", type=float, default=SweepConfig().temperature)
    p.add_argument("--passes", type=int, default=SweepConfig().passes)


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    rig = make_rig(args.baseline, (args.fisheye_size, args.fisheye_size))
    scene = SyntheticScene(args.scene, radius=args.radius)
    images, depth = render_scene(scene, rig, _grid(args), args.supersample)
    save_rig_file(rig, out / "rig.json")
    for i, img in enumerate(images, start=1):
        write_pfm(out / f"cam{i}.pfm", img)
        write_image(out / f"cam{i}.png", img)
    write_pfm(out / "gt_depth.pfm", depth)
    print(f"wrote rig.json, cam1..4 and gt_depth.pfm to {out}")
    return 0


def cmd_sweep(args) -> int:
    rig, grid, hyp = _rig(args), _grid(args), _hyp(args)
    images = _fisheyes(args.images)
    cfg = _sweep_cfg(args)
    if args.cost == "variance":
        vol = variance_cost(images, rig, grid, hyp, cfg)
    else:
        vol = concat_cost(images, rig, grid, hyp, args.cost[3:].upper(), cfg)
    save_volume(args.out, vol.values, vol.kind, vol.valid)
    print(f"{vol.kind} volume {vol.values.shape} ({vol.element_count} elements) -> {args.out}")
    return 0


def _write_estimate(args, disp) -> None:
    write_pfm(args.out, disp.values)
    if args.depth_out is not None:
        write_pfm(args.depth_out, disp.depth)


def cmd_estimate(args) -> int:
    grid, hyp = _grid(args), _hyp(args)
    if args.volume is not None:
        values, kind, _ = load_volume(args.volume)
        if kind != "variance":
            raise SystemExit(f"estimate needs a variance volume, got {kind!r}")
        reg = regularize(CostVolume(values, kind), passes=args.passes, out_shape=grid.shape)
        disp = softargmin_regress(reg, hyp, args.temperature)
    else:
        res = estimate_depth(_fisheyes(args.images), _rig(args), grid, hyp, _sweep_cfg(args))
        disp = res.disparity
    _write_estimate(args, disp)
    print(f"disparity range [{disp.values.min():.3f}, {disp.values.max():.3f}] -> {args.out}")
    return 0


def _initial_inverse_depth(args, images, rig, grid, hyp) -> np.ndarray:
    init = args.init
    if init == "sweep":
        return estimate_depth(images, rig, grid, hyp, _sweep_cfg(args)).disparity.inverse_depth
    if init.startswith("const:"):
        d = float(init.split(":", 1)[1])
        if d <= 0:
            raise SystemExit("constant initial depth must be positive")
        return np.full(grid.shape, 1.0 / d)
    if init.startswith("file:"):
        depth = read_pfm(init.split(":", 1)[1]).astype(np.float64)
        if depth.shape != grid.shape:
            raise SystemExit(f"initial depth is {depth.shape}, expected {grid.shape}")
        return 1.0 / depth
    raise SystemExit(f"unknown --init {init!r}")


def cmd_refine(args) -> int:
    rig, grid, hyp = _rig(args), _grid(args), _hyp(args)
    images = _fisheyes(args.images)
    q0 = _initial_inverse_depth(args, images, rig, grid, hyp)
    cfg = RefineConfig(step_size=args.lr, max_iters=args.iters, seam_width=args.seam_width, hypotheses=hyp)
    trace = refine(images, rig, q0, cfg)
    write_pfm(args.out, 1.0 / trace.inverse_depth)
    stream = open(args.trace, "w", newline="") if args.trace else sys.stdout
    try:
        w = csv.writer(stream)
        w.writerow(["iter", "L_total", "L_p", "L_s", "L_g"])
        for row in trace.rows():
            w.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])
    finally:
        if args.trace:
            stream.close()
    print(f"{trace.iterations} iterations ({trace.reason}), depth -> {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    hyp = _hyp(args)
    pred = read_pfm(args.pred).astype(np.float64)
    gt = read_pfm(args.gt).astype(np.float64)
    if args.pred_kind == "depth":
        pred = hyp.depth_to_index(pred)
    report = compute_metrics(pred, hyp.depth_to_index(gt))
    print(report.to_text())
    return 0


def _center_views(args):
    rig, grid = _rig(args), _grid(args)
    images = _fisheyes(args.images)
    depth = read_pfm(args.depth).astype(np.float64)
    views, masks = project_to_center(images, rig, depth, grid)
    return stitch_pair(views, masks), depth, grid


def cmd_render(args) -> int:
    pair, _, _ = _center_views(args)
    args.out.mkdir(parents=True, exist_ok=True)
    write_image(args.out / "pano_first.png", pair.first)
    write_image(args.out / "pano_second.png", pair.second)
    print(f"wrote pano_first.png and pano_second.png to {args.out}")
    return 0


def cmd_eval_loss(args) -> int:
    pair, depth, _ = _center_views(args)
    disp = _hyp(args).depth_to_index(depth)
    report = total_loss(pair, disp, seam_width=args.seam_width)
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in report.as_dict().items()))
    return 0


def cmd_cloud(args) -> int:
    depth = read_pfm(args.depth).astype(np.float64)
    pano = _load_map(args.pano) if args.pano else np.full(depth.shape, 0.5)
    n = export_pointcloud(args.out, depth, pano)
    print(f"{n} vertices -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="omnisweep", description="Omnidirectional multi-fisheye depth estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic scene and its ground truth")
    p.add_argument("--scene", choices=("box", "sphere"), default="box")
    p.add_argument("--radius", type=float, default=2.0, help="sphere radius in meters")
    p.add_argument("--baseline", type=float, default=0.2, help="camera distance from the rig center (m)")
    p.add_argument("--fisheye-size", type=int, default=400)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common], help="build a cost volume from four fisheyes")
    p.add_argument("--images", nargs=4, required=True)
    p.add_argument("--cost", choices=("variance", "cat4c", "cat2c"), default="variance")
    p.add_argument("--out", type=Path, required=True)
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", parents=[common], help="regress disparity from a volume or images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--volume", type=Path)
    src.add_argument("--images", nargs=4)
    p.add_argument("--out", type=Path, required=True, help="disparity (hypothesis index) PFM")
    p.add_argument("--depth-out", type=Path, help="optional depth PFM")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("refine", parents=[common], help="per-scene depth refinement")
    p.add_argument("--images", nargs=4, required=True)
    p.add_argument("--init", default="sweep", help="sweep, const:<depth m> or file:<depth.pfm>")
    p.add_argument("--iters", type=int, default=RefineConfig().max_iters)
    p.add_argument("--lr", type=float, default=RefineConfig().step_size)
    p.add_argument("--out", type=Path, required=True, help="refined depth PFM")
    p.add_argument("--trace", type=Path, help="CSV trace (default: stdout)")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="metrics of a prediction against ground-truth depth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True, help="ground-truth depth PFM")
    p.add_argument("--pred-kind", choices=("disparity", "depth"), default="disparity")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="stitched center panoramas for a depth map")
    p.add_argument("--images", nargs=4, required=True)
    p.add_argument("--depth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval-loss", parents=[common], help="pseudo-stereo loss of a depth map")
    p.add_argument("--images", nargs=4, required=True)
    p.add_argument("--depth", type=Path, required=True)
    p.set_defaults(func=cmd_eval_loss)

    p = sub.add_parser("cloud", parents=[common], help="export a colored point cloud")
    p.add_argument("--depth", type=Path, required=True)
    p.add_argument("--pano", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_cloud)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
