"""Batch dataset generation: discovery, QA gating, pair synthesis and layout.

Output layout under ``output_root``::

    manifest.json
    <scene_id>/qa.json
    <scene_id>/<view:04d>/sharp.png
    <scene_id>/<view:04d>/blur_<k>.png
    <scene_id>/<view:04d>/alpha_<k>.png      rigid-motion images only
    <scene_id>/<view:04d>/x1_<d>/sharp.png   one subdirectory per extra scale
    <scene_id>/<view:04d>/x1_<d>/blur_<k>.png
    <scene_id>/<view:04d>/pair.json

Every pair is generated from ``derive_seed(dataset_seed, scene_id, view)``,
so results do not depend on worker count or scheduling order.
"""

from __future__ import annotations

import dataclasses
import fnmatch
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .blur import CRFS, BlurPair, SynthesisConfig, synthesize_pair
from .cameras import CameraView, load_cameras
from .degrade import DegradeConfig, NoiseParams, degrade, degrade_at, parse_factor
from .imaging import read_mask, read_png, sha256_file, write_png
from .metrics import QA_THRESHOLD_DB, SceneQAReport, qa_filter_scene
from .render import render
from .scene import load_scene
from .seeding import derive_seed

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
HOLDOUT_EVERY = 8
RIGID_PROBABILITY_WITH_MASKS = 0.5


class OutputExistsError(RuntimeError):
    """The output root already holds data and neither force nor resume was given."""


@dataclass
class DatasetConfig:
    input_roots: list
    output_root: str
    dataset_seed: int = 0
    M: int = 121
    n_trajectories_per_view: int = 2
    rigid_body_probability: float | None = None  # None: 0.5 with masks, else 0
    resolution_factors: list = field(default_factory=lambda: [Fraction(1)])
    resolution_mode: str = "all"  # "all" writes every factor, "random" picks one per pair
    noise: NoiseParams | None = field(default_factory=NoiseParams)
    qa_threshold_db: float = QA_THRESHOLD_DB
    views_per_scene: int | str = "all"
    scene_scale_multiplier: float = 1.0
    holdout_every: int = HOLDOUT_EVERY
    require_qa: bool = True
    crf: str = "srgb"
    image_bits: int = 8
    background: tuple = (0.0, 0.0, 0.0)
    workers: int = 1
    scenes: str | None = None  # glob over scene ids

    def __post_init__(self):
        if isinstance(self.input_roots, (str, Path)):
            self.input_roots = [self.input_roots]
        self.input_roots = [str(r) for r in self.input_roots]
        self.output_root = str(self.output_root)
        self.resolution_factors = sorted({parse_factor(f) for f in self.resolution_factors},
                                         reverse=True)
        if isinstance(self.noise, dict):
            self.noise = NoiseParams.from_dict(self.noise)
        self.background = tuple(float(c) for c in self.background)
        if self.M < 1 or self.M % 2 == 0:
            raise ValueError(f"M must be odd and positive, got {self.M}")
        if self.n_trajectories_per_view < 1:
            raise ValueError("n_trajectories_per_view must be >= 1")
        p = self.rigid_body_probability
        if p is not None and not 0.0 <= p <= 1.0:
            raise ValueError(f"rigid_body_probability must lie in [0, 1], got {p}")
        if self.resolution_mode not in ("all", "random"):
            raise ValueError(f"resolution_mode must be 'all' or 'random', got {self.resolution_mode!r}")
        v = self.views_per_scene
        if not (v == "all" or (isinstance(v, int) and v >= 1)):
            raise ValueError(f"views_per_scene must be a positive integer or 'all', got {v!r}")
        if self.holdout_every < 2:
            raise ValueError("holdout_every must be >= 2")
        if self.crf not in CRFS:
            raise ValueError(f"unknown CRF {self.crf!r}")
        if self.image_bits not in (8, 16):
            raise ValueError("image_bits must be 8 or 16")
        if not self.scene_scale_multiplier > 0:
            raise ValueError("scene_scale_multiplier must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolution_factors"] = [str(f) for f in self.resolution_factors]
        d["noise"] = None if self.noise is None else self.noise.to_dict()
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def snapshot(self) -> dict:
        """Config as recorded in the manifest; run-local settings are left out."""
        d = self.to_dict()
        for key in ("output_root", "workers"):
            d.pop(key)
        return d


def load_config(path) -> DatasetConfig:
    with open(path) as f:
        return DatasetConfig.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneSource:
    scene_id: str
    ply: Path
    cameras: Path
    masks: Path | None

    @property
    def directory(self) -> Path:
        return self.cameras.parent


def _find_ply(d: Path) -> Path | None:
    if (d / "scene.ply").is_file():
        return d / "scene.ply"
    # Layout written by the reference 3DGS trainer.
    its = sorted(d.glob("point_cloud/iteration_*/point_cloud.ply"),
                 key=lambda p: int(p.parent.name.split("_")[-1]))
    return its[-1] if its else None


def discover_scenes(roots) -> tuple[list[SceneSource], list[dict]]:
    """Scan each root for ``<scene_id>/`` directories holding a Gaussian PLY.

    Returns ``(scenes, skipped)``. Scenes are sorted by id; a scene id seen in
    several roots is taken from the last one. Directories with a PLY but no
    ``cameras.json`` end up in ``skipped``.
    """
    found: dict[str, SceneSource] = {}
    skipped = []
    for root in roots:
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"input root {root} is not a readable directory")
        for d in sorted(p for p in root.iterdir() if p.is_dir()):
            ply = _find_ply(d)
            if ply is None:
                continue
            cams = d / "cameras.json"
            if not cams.is_file():
                log.warning("skipping %s: no cameras.json", d)
                skipped.append({"scene_id": d.name, "path": str(d), "reason": "missing cameras.json"})
                continue
            if d.name in found:
                log.warning("scene %s in %s overrides %s", d.name, root, found[d.name].directory)
            masks = d / "masks"
            found[d.name] = SceneSource(d.name, ply, cams, masks if masks.is_dir() else None)
    return [found[k] for k in sorted(found)], skipped


# ---------------------------------------------------------------------------
# Per-scene work
# ---------------------------------------------------------------------------


def split_views(views, holdout_every: int = HOLDOUT_EVERY) -> tuple[list, list]:
    """``(held_out, anchors)``: every ``holdout_every``-th view is held out for QA."""
    held = [v for i, v in enumerate(views) if i % holdout_every == 0]
    anchors = [v for i, v in enumerate(views) if i % holdout_every != 0]
    return held, anchors


def select_anchors(anchors: list, views_per_scene) -> list:
    """Evenly spaced subset of ``anchors``."""
    if views_per_scene == "all" or views_per_scene >= len(anchors):
        return list(anchors)
    n = len(anchors)
    return [anchors[(i * n) // views_per_scene] for i in range(views_per_scene)]


def _mask_path(src: SceneSource, view: CameraView) -> Path | None:
    if view.mask is not None:
        p = src.directory / view.mask
        return p if p.is_file() else None
    if src.masks is not None:
        p = src.masks / f"{view.index:04d}.png"
        return p if p.is_file() else None
    return None


def run_scene_qa(src: SceneSource, config: DatasetConfig, scene=None, cams=None) -> SceneQAReport:
    """Render the held-out views and gate the scene on their PSNR spread."""
    scene = scene if scene is not None else load_scene(src.ply, src.scene_id)
    cams = cams if cams is not None else load_cameras(src.cameras)
    held, _ = split_views(cams.views, config.holdout_every)
    missing = [v.index for v in held
               if v.image is None or not (src.directory / v.image).is_file()]
    if len(held) < 2 or missing:
        reason = (f"held-out views {missing} have no ground-truth image" if missing
                  else f"only {len(held)} held-out view(s); QA needs 2")
        passed = not config.require_qa
        if passed:
            reason = "QA skipped: " + reason
        return SceneQAReport(src.scene_id, [], float("nan"), float("nan"), passed,
                             config.qa_threshold_db, reason)
    pairs = []
    for v in held:
        gt = read_png(src.directory / v.image)
        img, _ = render(scene, v.pose, v.intrinsics, config.background)
        if gt.shape != img.shape:
            raise ValueError(f"view {v.index}: ground truth {gt.shape} vs render {img.shape}")
        pairs.append((gt, img))
    return qa_filter_scene(pairs, src.scene_id, [v.index for v in held], config.qa_threshold_db)


def _factor_dir(factor: Fraction) -> str:
    return f"x{factor.numerator}_{factor.denominator}"


def _view_outputs(pair: BlurPair, config: DatasetConfig, pair_seed: int) -> tuple[dict, dict]:
    """``(images, degradation record)``; images are keyed by relative file name."""
    noise = config.noise
    out = {}
    if config.resolution_mode == "random":
        rng = np.random.default_rng(derive_seed(pair_seed, "resolution"))
        dcfg = DegradeConfig(config.resolution_factors,
                             None if noise is None else dataclasses.replace(
                                 noise, seed=derive_seed(pair_seed, "noise")), config.crf)
        p = degrade(pair, dcfg, rng)
        out["sharp.png"] = p.sharp
        out.update({f"blur_{k}.png": b for k, b in enumerate(p.blurry)})
        return out, {"resolution": str(p.scale_factor),
                     "noise": None if p.noise_params is None else p.noise_params.to_dict()}
    meta = {}
    for factor in config.resolution_factors:
        fnoise = None if noise is None else dataclasses.replace(
            noise, seed=derive_seed(pair_seed, "noise", str(factor)))
        p = degrade_at(pair, factor, fnoise, config.crf)
        prefix = "" if factor == 1 else _factor_dir(factor) + "/"
        out[prefix + "sharp.png"] = p.sharp
        out.update({f"{prefix}blur_{k}.png": b for k, b in enumerate(p.blurry)})
        meta[str(factor)] = None if fnoise is None else fnoise.to_dict()
    return out, {"resolution": [str(f) for f in config.resolution_factors], "noise": meta}


def _reusable(view_dir: Path, out_root: Path) -> dict | None:
    """The pair record in ``view_dir`` if all of its files are intact."""
    rec_path = view_dir / "pair.json"
    if not rec_path.is_file():
        return None
    try:
        rec = json.loads(rec_path.read_text())
        for rel, digest in rec["files"].items():
            p = out_root / rel
            if not p.is_file() or sha256_file(p) != digest:
                return None
    except (ValueError, KeyError):
        return None
    return rec


def generate_view(scene, src: SceneSource, view: CameraView, config: DatasetConfig,
                  out_root: Path, rigid_probability: float) -> dict:
    """Synthesize, degrade and write one anchor view; returns its pair record."""
    pair_seed = derive_seed(config.dataset_seed, src.scene_id, view.index)
    mask_path = _mask_path(src, view)
    mask = read_mask(mask_path) if mask_path is not None else None
    syn = SynthesisConfig(config.M, config.n_trajectories_per_view, rigid_probability,
                          config.scene_scale_multiplier, config.crf, config.background)
    pair = synthesize_pair(scene, view.pose, view.intrinsics, syn, pair_seed, mask)

    images, degradation = _view_outputs(pair, config, pair_seed)
    for k, alpha in enumerate(pair.object_alpha):
        if alpha is not None:
            images[f"alpha_{k}.png"] = alpha

    rel_dir = Path(src.scene_id) / f"{view.index:04d}"
    files = {}
    for name in sorted(images):
        rel = rel_dir / name
        write_png(out_root / rel, images[name], config.image_bits)
        files[rel.as_posix()] = sha256_file(out_root / rel)
    prov = pair.provenance()
    prov.pop("noise")
    prov.pop("scale_factor")
    record = {
        "scene_id": src.scene_id,
        "view_index": view.index,
        "seed": pair_seed,
        "mask": None if mask_path is None else str(mask_path.relative_to(src.directory)),
        "degradation": degradation,
        "blurry": prov["blurry"],
        "files": files,
    }
    # Written last: its presence marks the view as complete for --resume.
    tmp = out_root / rel_dir / "pair.json.part"
    tmp.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, out_root / rel_dir / "pair.json")
    return record


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
    os.replace(tmp, path)


def _qa_dict(report: SceneQAReport) -> dict:
    d = report.to_dict()
    # NaN marks "not measured" in memory; JSON gets null.
    for key in ("mean_psnr", "mean_ssim"):
        if d[key] != d[key]:
            d[key] = None
    return d


def process_scene(src: SceneSource, config: DatasetConfig, resume: bool = False,
                  qa_only: bool = False) -> dict:
    """QA one scene and, if it passes, generate all of its pairs.

    Any exception is caught and reported in the returned record so that one
    broken scene never aborts a batch.
    """
    out_root = Path(config.output_root)
    result = {"scene_id": src.scene_id, "source": str(src.directory), "status": "error",
              "qa": None, "pairs": [], "error": None}
    try:
        scene = load_scene(src.ply, src.scene_id)
        cams = load_cameras(src.cameras)
        report = run_scene_qa(src, config, scene, cams)
        result["qa"] = _qa_dict(report)
        _write_json(out_root / src.scene_id / "qa.json", result["qa"])
        if not report.passed:
            result["status"] = "failed_qa"
            return result
        result["status"] = "passed"
        if qa_only:
            return result
        _, anchors = split_views(cams.views, config.holdout_every)
        anchors = select_anchors(anchors, config.views_per_scene)
        p = config.rigid_body_probability
        if p is None:
            p = RIGID_PROBABILITY_WITH_MASKS if any(_mask_path(src, v) for v in anchors) else 0.0
        for view in anchors:
            rec = _reusable(out_root / src.scene_id / f"{view.index:04d}", out_root) if resume else None
            if rec is None:
                rec = generate_view(scene, src, view, config, out_root, p)
            result["pairs"].append(rec)
    except Exception as e:  # noqa: BLE001 - recorded per scene
        log.exception("scene %s failed", src.scene_id)
        result["status"] = "error"
        result["error"] = f"{type(e).__name__}: {e}"
    return result


# ---------------------------------------------------------------------------
# Batch driver
# ---------------------------------------------------------------------------


def resolve_workers(config: DatasetConfig, override: int | None = None) -> int:
    """Explicit override, then ``BLURFORGE_WORKERS``, then the config value."""
    if override is not None:
        return max(1, int(override))
    env = os.environ.get("BLURFORGE_WORKERS")
    if env:
        return max(1, int(env))
    return config.workers


def _file_kind(rel: str) -> str:
    name = rel.rsplit("/", 1)[-1]
    scaled = rel.count("/") > 2
    if name == "sharp.png":
        return "sharp_scaled" if scaled else "sharp"
    if name.startswith("blur_"):
        return "blurry"
    return "alpha"


def build_manifest(config: DatasetConfig, results: list, skipped: list) -> dict:
    pairs = [rec for r in results for rec in r["pairs"]]
    counts = {"scenes": len(results), "scenes_passed": 0, "scenes_failed": 0,
              "scenes_error": 0, "skipped": len(skipped), "pairs": len(pairs),
              "sharp": 0, "sharp_scaled": 0, "blurry": 0, "alpha": 0}
    for r in results:
        key = {"passed": "scenes_passed", "failed_qa": "scenes_failed"}.get(r["status"], "scenes_error")
        counts[key] += 1
    for rec in pairs:
        for rel in rec["files"]:
            counts[_file_kind(rel)] += 1
    scenes = [{k: r[k] for k in ("scene_id", "source", "status", "qa", "error")} for r in results]
    return {"version": MANIFEST_VERSION, "config": config.snapshot(), "counts": counts,
            "scenes": scenes, "skipped": skipped, "pairs": pairs}


def plan(config: DatasetConfig) -> tuple[list[SceneSource], list[dict]]:
    scenes, skipped = discover_scenes(config.input_roots)
    if config.scenes:
        scenes = [s for s in scenes if fnmatch.fnmatchcase(s.scene_id, config.scenes)]
    return scenes, skipped


def _check_output_root(out: Path, force: bool, resume: bool) -> None:
    if out.exists() and any(out.iterdir()) and not (force or resume):
        raise OutputExistsError(f"output root {out} is not empty; pass --force or --resume")
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output root {out} is not writable")


def run_pipeline(config: DatasetConfig, force: bool = False, resume: bool = False,
                 workers: int | None = None, qa_only: bool = False) -> dict:
    """Run the whole dataset build and write ``manifest.json``.

    Scenes are processed on a process pool; only this function writes the
    manifest, after all scenes have returned.
    """
    out = Path(config.output_root)
    _check_output_root(out, force, resume)
    scenes, skipped = plan(config)
    n = min(resolve_workers(config, workers), max(1, len(scenes)))
    if n == 1:
        results = [process_scene(s, config, resume, qa_only) for s in scenes]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            futures = [pool.submit(process_scene, s, config, resume, qa_only) for s in scenes]
            results = [f.result() for f in futures]
    manifest = build_manifest(config, results, skipped)
    if not qa_only:
        _write_json(out / MANIFEST, manifest)
    return manifest


def validate(output_root) -> list[str]:
    """Check a finished output tree against its manifest; returns problems found."""
    out = Path(output_root)
    path = out / MANIFEST
    if not path.is_file():
        return [f"{path} does not exist"]
    try:
        manifest = json.loads(path.read_text())
    except ValueError as e:
        return [f"{path} is not valid JSON: {e}"]
    problems = []
    expected = {"sharp": 0, "sharp_scaled": 0, "blurry": 0, "alpha": 0}
    for rec in manifest.get("pairs", []):
        for rel, digest in rec["files"].items():
            p = out / rel
            if not p.is_file():
                problems.append(f"missing file {rel}")
            elif sha256_file(p) != digest:
                problems.append(f"checksum mismatch for {rel}")
            expected[_file_kind(rel)] += 1
        pj = out / rec["scene_id"] / f"{rec['view_index']:04d}" / "pair.json"
        if not pj.is_file():
            problems.append(f"missing {pj.relative_to(out)}")
    counts = manifest.get("counts", {})
    expected["pairs"] = len(manifest.get("pairs", []))
    statuses = [s["status"] for s in manifest.get("scenes", [])]
    expected["scenes_passed"] = statuses.count("passed")
    expected["scenes_failed"] = statuses.count("failed_qa")
    for key, value in expected.items():
        if counts.get(key) != value:
            problems.append(f"count {key} is {counts.get(key)}, records give {value}")
    for s in manifest.get("scenes", []):
        if s["qa"] is not None and not (out / s["scene_id"] / "qa.json").is_file():
            problems.append(f"missing {s['scene_id']}/qa.json")
        if s["status"] != "passed" and any(r["scene_id"] == s["scene_id"] for r in manifest["pairs"]):
            problems.append(f"scene {s['scene_id']} did not pass but has pairs")
    return problems
