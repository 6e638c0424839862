"""Command line interface.

Subcommands cover each pipeline stage (pairs, match, orient, densify,
dsm-eval) plus the end-to-end harness (run, report).  Stage commands read
and write the documented interchange files, so external tools can replace
any stage: matches travel as CSV, orientations and evaluation reports as
JSON, DSMs as ASCII grids.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .dsm import DEFAULT_CELL, GridSpec, dsm_from_disparity
from .evaluation import evaluate_dsm
from .features import FeatureConfig, detect_and_describe
from .frames import LocalFrame
from .harness import (
    default_workers,
    load_manifest,
    load_run_config,
    report_tables,
    run_pipeline,
    select_all_pairs,
    RunConfig,
)
from .lsm import refine_matchset
from .matching import DEFAULT_RATIO, load_matches, match_ratio_test, save_matches
from .orientation import OrientationConfig, load_orientation, ransac_bias, save_orientation
from .rasters import load_image, read_asc, write_asc, write_sidecar
from .rectify import GroundRect, rectify
from .rpc import load_rpc
from .sgm import sgm

log = logging.getLogger(__name__)


def _dims(img) -> tuple[int, int]:
    return (img.shape[1], img.shape[0])


def cmd_pairs(args) -> int:
    from .pairs import SelectionConfig

    cfg = RunConfig(
        manifest=args.manifest,
        selection=SelectionConfig(
            angle_min=args.angle_min, angle_max=args.angle_max, k=args.k,
        ),
        seed=args.seed,
    )
    tiles = load_manifest(args.manifest)
    entries = select_all_pairs(tiles, cfg)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(entries, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"selected {len(entries)} pairs -> {args.out}")
    return 0


def cmd_match(args) -> int:
    img1 = load_image(args.a)
    img2 = load_image(args.b)
    fc = FeatureConfig(max_keypoints=args.max_keypoints)
    kps1 = detect_and_describe(img1, fc)
    kps2 = detect_and_describe(img2, fc)
    matches = match_ratio_test(
        kps1, kps2, args.pair_id, _dims(img1), _dims(img2),
        ratio=args.ratio, crosscheck=not args.no_crosscheck,
    )
    save_matches(matches, args.out)
    print(f"{len(matches)} matches -> {args.out}")
    return 0


def cmd_orient(args) -> int:
    img1 = load_image(args.a)
    img2 = load_image(args.b)
    m1 = load_rpc(args.rpc_a)
    m2 = load_rpc(args.rpc_b)
    matches, report = load_matches(
        args.matches, args.pair_id, _dims(img1), _dims(img2)
    )
    if report.n_rejected_bounds:
        log.warning("%d out-of-bounds rows rejected", report.n_rejected_bounds)
    ocfg = OrientationConfig(
        t=args.t, ransac_threshold=args.threshold,
        ransac_iterations=args.iterations, min_inliers=args.min_inliers,
        seed=args.seed,
    )
    if args.lsm and args.lsm_order == "before":
        matches, _ = refine_matchset(img1, img2, matches)
    orientation = ransac_bias(m1, m2, matches, ocfg)
    if args.lsm and args.lsm_order == "after":
        matches, _ = refine_matchset(img1, img2, matches)
        orientation = ransac_bias(m1, m2, matches, ocfg)
    if args.refined_matches:
        save_matches(matches, args.refined_matches)
    save_orientation(orientation, args.out)
    print(
        f"success={orientation.success} inlier_ratio={orientation.inlier_ratio:.3f} "
        f"epipolar_rms={orientation.epipolar_rms:.3f} -> {args.out}"
    )
    return 0 if orientation.success else 1


def cmd_densify(args) -> int:
    img1 = load_image(args.a)
    img2 = load_image(args.b)
    m1 = load_rpc(args.rpc_a)
    m2 = load_rpc(args.rpc_b)
    orientation = load_orientation(args.orientation)
    if not orientation.success:
        print("orientation did not pass the success gate; refusing to densify",
              file=sys.stderr)
        return 1
    roi = GroundRect(*args.roi)
    frame = LocalFrame(*args.frame) if args.frame else LocalFrame(*roi.center)
    rmap, rect1, rect2 = rectify(
        img1, img2, m1, m2, orientation.bias, roi,
        h_min=args.h_min, h_max=args.h_max,
    )
    disp = sgm(rect1, rect2, rmap.d_min, rmap.d_max, p1=args.p1, p2=args.p2)
    x0, y0 = frame.to_xy(roi.lat_min, roi.lon_min)
    x1, y1 = frame.to_xy(roi.lat_max, roi.lon_max)
    grid = GridSpec(
        min(x0, x1), min(y0, y1),
        max(1, int(abs(x1 - x0) / args.cell)),
        max(1, int(abs(y1 - y0) / args.cell)),
        args.cell, frame,
    )
    dsm_grid, stats = dsm_from_disparity(disp, rmap, m1, m2, orientation.bias, grid)
    write_asc(dsm_grid, args.out)
    write_sidecar(args.out, {
        "source_a": str(args.a), "source_b": str(args.b),
        "n_triangulated": stats.n_triangulated, "n_dropped": stats.n_dropped,
    })
    print(f"{stats.n_triangulated} points -> {args.out}")
    return 0


def cmd_dsm_eval(args) -> int:
    generated = read_asc(args.generated)
    truth = read_asc(args.truth)
    ev = evaluate_dsm(generated, truth)
    payload = {
        "completeness": ev.completeness,
        "rmse": ev.rmse,
        "shift": [float(v) for v in ev.shift],
        "pre_rmse": ev.pre_rmse,
        "planar_degenerate": ev.planar_degenerate,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"completeness={ev.completeness:.2f}% rmse={ev.rmse:.3f} m -> {args.out}")
    return 0


def cmd_run(args) -> int:
    overrides = {
        "out_dir": args.out_dir, "run_id": args.run_id,
        "workers": args.workers, "seed": args.seed,
    }
    cfg = load_run_config(args.config, **overrides)
    if args.force:
        cfg.force = True
    if cfg.workers < 1:
        cfg.workers = default_workers()
    stats, run_dir = run_pipeline(cfg)
    for label in sorted(stats["methods"]):
        m = stats["methods"][label]
        print(f"{label}: {m['n_success']}/{m['n_pairs']} pairs "
              f"({m['success_rate']:.1f}% success)")
    print(f"run -> {run_dir}")
    return 0


def cmd_report(args) -> int:
    written = report_tables(args.run_dir, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satstereo",
        description="Satellite stereo pipeline: pair selection, matching, "
                    "orientation, densification, and DSM evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pairs", help="select stereo pairs from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--angle-min", type=float, default=5.0)
    p.add_argument("--angle-max", type=float, default=35.0)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("match", help="detect features and write matches")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--pair-id", default="pair")
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO)
    p.add_argument("--no-crosscheck", action="store_true")
    p.add_argument("--max-keypoints", type=int, default=4000)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("orient", help="estimate bias compensation from matches")
    p.add_argument("--matches", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--rpc-a", required=True)
    p.add_argument("--rpc-b", required=True)
    p.add_argument("--pair-id", default="pair")
    p.add_argument("--out", required=True)
    p.add_argument("--refined-matches", default=None,
                   help="also write the match set used for the final fit")
    p.add_argument("--t", type=float, default=5.0)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--min-inliers", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lsm", action="store_true",
                   help="refine matches with least squares matching")
    p.add_argument("--lsm-order", choices=("before", "after"), default="before",
                   help="refine before or after the first orientation fit")
    p.set_defaults(func=cmd_orient)

    p = sub.add_parser("densify", help="rectify, run SGM, and triangulate a DSM")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--rpc-a", required=True)
    p.add_argument("--rpc-b", required=True)
    p.add_argument("--orientation", required=True)
    p.add_argument("--roi", type=float, nargs=4, required=True,
                   metavar=("LAT_MIN", "LON_MIN", "LAT_MAX", "LON_MAX"))
    p.add_argument("--frame", type=float, nargs=2, default=None,
                   metavar=("LAT0", "LON0"))
    p.add_argument("--out", required=True)
    p.add_argument("--cell", type=float, default=DEFAULT_CELL)
    p.add_argument("--h-min", type=float, default=None)
    p.add_argument("--h-max", type=float, default=None)
    p.add_argument("--p1", type=int, default=10)
    p.add_argument("--p2", type=int, default=120)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("dsm-eval", help="score a DSM against a reference")
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dsm_eval)

    p = sub.add_parser("run", help="run the full workflow from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--run-id", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="recompute pairs that already have a report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="emit plot-ready tables from a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
