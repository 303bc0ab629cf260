"""Command-line interface.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cameras import load_cameras
from .demo import make_demo_scene
from .imaging import write_png
from .pipeline import DatasetConfig, OutputExistsError, load_config, plan, run_pipeline, validate
from .render import render, write_depth
from .scene import CameraIntrinsics, load_scene
from .trajectory import CurveParams, build_trajectory, sample_curve_params

log = logging.getLogger("blurforge")


class UsageError(Exception):
    pass


def _config_from_args(args) -> DatasetConfig:
    d = {}
    if args.config:
        d = load_config(args.config).to_dict()
    overrides = {
        "input_roots": args.input,
        "output_root": args.output,
        "dataset_seed": args.seed,
        "views_per_scene": args.views_per_scene,
        "n_trajectories_per_view": args.n_trajectories,
        "M": args.subframes,
        "resolution_factors": args.factors,
        "scenes": args.scenes,
        "image_bits": args.bits,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "no_noise", False):
        d["noise"] = None
    if "input_roots" not in d or "output_root" not in d:
        raise UsageError("--input and --output are required (directly or via --config)")
    return DatasetConfig.from_dict(d)


def _views_arg(s: str):
    return s if s == "all" else int(s)


def _add_dataset_args(p):
    p.add_argument("--config", help="JSON file mirroring DatasetConfig")
    p.add_argument("--input", action="append", help="scene root (repeatable)")
    p.add_argument("--output", help="output root")
    p.add_argument("--seed", type=int, help="dataset seed")
    p.add_argument("--workers", type=int, help="scene worker processes")
    p.add_argument("--scenes", help="glob over scene ids")
    p.add_argument("--views-per-scene", type=_views_arg, help="anchor views per scene or 'all'")
    p.add_argument("--n-trajectories", type=int, help="blurry images per sharp image")
    p.add_argument("--subframes", type=int, help="sub-frames per blurry image (odd)")
    p.add_argument("--factors", nargs="+", help="resolution factors, e.g. 1 1/2 1/3 1/4")
    p.add_argument("--bits", type=int, choices=(8, 16), help="PNG bit depth")
    p.add_argument("--no-noise", action="store_true", help="disable noise injection")


def cmd_generate(args) -> int:
    config = _config_from_args(args)
    if args.dry_run:
        scenes, skipped = plan(config)
        print(json.dumps({"scenes": [s.scene_id for s in scenes], "skipped": skipped}, indent=1))
        return 0
    manifest = run_pipeline(config, force=args.force, resume=args.resume, workers=args.workers)
    print(json.dumps(manifest["counts"], sort_keys=True))
    return 0


def cmd_qa(args) -> int:
    config = _config_from_args(args)
    manifest = run_pipeline(config, force=True, workers=args.workers, qa_only=True)
    for s in manifest["scenes"]:
        print(json.dumps({"scene_id": s["scene_id"], "status": s["status"], "qa": s["qa"],
                          "error": s["error"]}, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    scene_dir = Path(args.scene_dir)
    scene = load_scene(scene_dir / "scene.ply" if args.ply is None else args.ply)
    cams = load_cameras(scene_dir / "cameras.json")
    views = {v.index: v for v in cams.views}
    if args.view not in views:
        raise ValueError(f"view {args.view} not in {sorted(views)}")
    v = views[args.view]
    img, depth = render(scene, v.pose, v.intrinsics)
    write_png(args.out, img, args.bits or 8)
    if args.depth:
        write_depth(depth, args.depth)
    return 0


def _scaled(intr: CameraIntrinsics, s: float) -> CameraIntrinsics:
    w, h = max(1, round(intr.width * s)), max(1, round(intr.height * s))
    return CameraIntrinsics(intr.fx * w / intr.width, intr.fy * h / intr.height,
                            intr.cx * w / intr.width, intr.cy * h / intr.height, w, h)


def cmd_preview(args) -> int:
    scene_dir = Path(args.scene_dir)
    scene = load_scene(scene_dir / "scene.ply")
    views = {v.index: v for v in load_cameras(scene_dir / "cameras.json").views}
    v = views[args.view]
    rng = np.random.default_rng(args.seed)
    params = sample_curve_params(rng)
    if args.order is not None:
        params = CurveParams(args.order, params.delta_t, params.delta_r)
    traj = build_trajectory(args.seed, params, v.pose, args.subframes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.json").write_text(json.dumps(traj.to_dict(), indent=1) + "\n")
    thumb = _scaled(v.intrinsics, args.thumb_scale)
    picks = np.unique(np.linspace(0, traj.M - 1, args.k).round().astype(int))
    frames = [render(scene, traj.poses[i], thumb)[0] for i in picks]
    write_png(out / "strip.png", np.concatenate(frames, axis=1))
    print(json.dumps({"subframes": picks.tolist(), "params": params.to_dict()}))
    return 0


def cmd_validate(args) -> int:
    problems = validate(args.output_root)
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return 0 if not problems else 1


def cmd_demo(args) -> int:
    d = make_demo_scene(args.root, args.scene_id, args.seed, args.views, args.size)
    print(d)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blurforge",
                                     description="Synthesize blurry/sharp image pairs from Gaussian splat scenes.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a dataset")
    _add_dataset_args(p)
    p.add_argument("--force", action="store_true", help="write into a non-empty output root")
    p.add_argument("--resume", action="store_true", help="keep finished pairs from an earlier run")
    p.add_argument("--dry-run", action="store_true", help="list scenes without rendering")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("qa", help="write per-scene QA reports only")
    _add_dataset_args(p)
    p.set_defaults(func=cmd_qa)

    p = sub.add_parser("render", help="render one view to PNG")
    p.add_argument("scene_dir")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ply", help="scene PLY if not <scene_dir>/scene.ply")
    p.add_argument("--depth", help="also write a binary depth map")
    p.add_argument("--bits", type=int, choices=(8, 16))
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("preview-trajectory", help="trajectory JSON plus a thumbnail strip")
    p.add_argument("scene_dir")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", type=int, choices=range(1, 6))
    p.add_argument("--subframes", type=int, default=121)
    p.add_argument("-k", type=int, default=8, help="number of thumbnails")
    p.add_argument("--thumb-scale", type=float, default=0.5)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("validate", help="check an output tree against its manifest")
    p.add_argument("output_root")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("make-demo-scene", help="write a procedural scene for smoke tests")
    p.add_argument("root")
    p.add_argument("--scene-id", default="demo")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"blurforge: error: {e}", file=sys.stderr)
        return 2
    except (OutputExistsError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
