"""Procedural demo scene with cameras, ground-truth images and object masks.

The scene is a compact colored object surrounded by a shell of large
backdrop Gaussians, viewed by a ring of cameras. Ground-truth images are
renders plus a little seeded noise, so the quality gate sees realistic,
finite PSNR values.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cameras import CameraView, SceneCameras, save_cameras
from .imaging import write_png
from .render import render
from .scene import CameraIntrinsics, CameraPose, GaussianScene, rgb_to_sh_dc, save_scene, SH_COUNT

GT_NOISE_SIGMA = 0.005
RING_RADIUS = 3.0
MASK_THRESHOLD = 0.5


def _random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def demo_object(seed: int, count: int = 200) -> GaussianScene:
    """A blobby, two-toned object of radius about 0.6 around the origin."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    positions = d * 0.5 * rng.uniform(0.3, 1.0, size=(count, 1)) ** (1 / 3)
    scales = np.exp(rng.uniform(np.log(0.03), np.log(0.09), size=(count, 3)))
    base = np.where(positions[:, :1] > 0, [[0.85, 0.35, 0.2]], [[0.2, 0.45, 0.85]])
    colors = np.clip(base + 0.15 * rng.normal(size=(count, 3)), 0, 1)
    sh = np.zeros((count, SH_COUNT, 3))
    sh[:, 0] = rgb_to_sh_dc(colors)
    sh[:, 1:4] = 0.05 * rng.normal(size=(count, 3, 3))
    return GaussianScene(positions, scales, _random_rotations(rng, count),
                         rng.uniform(0.7, 0.98, size=count), sh, scene_id="object")


def demo_backdrop(seed: int, count: int = 400) -> GaussianScene:
    """Large, opaque, smoothly colored primitives on a shell of radius 5 to 6."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    positions = d * rng.uniform(5.0, 6.0, size=(count, 1))
    scales = np.exp(rng.uniform(np.log(0.3), np.log(0.7), size=(count, 3)))
    colors = np.clip(0.5 + 0.35 * d + 0.1 * rng.normal(size=(count, 3)), 0, 1)
    sh = np.zeros((count, SH_COUNT, 3))
    sh[:, 0] = rgb_to_sh_dc(colors)
    return GaussianScene(positions, scales, _random_rotations(rng, count),
                         rng.uniform(0.9, 1.0, size=count), sh, scene_id="backdrop")


def ring_cameras(n_views: int, size: int, radius: float = RING_RADIUS) -> list[tuple]:
    """``(intrinsics, pose)`` for ``n_views`` cameras on a slightly raised ring."""
    f = size * 1.05
    intr = CameraIntrinsics(f, f, size / 2, size / 2, size, size)
    out = []
    for i in range(n_views):
        a = 2 * np.pi * i / n_views
        eye = radius * np.array([np.sin(a), -0.25, np.cos(a)])
        out.append((intr, CameraPose.look_at(eye, np.zeros(3))))
    return out


def make_demo_scene(root, scene_id: str = "demo", seed: int = 0, n_views: int = 16,
                    size: int = 96) -> Path:
    """Write ``<root>/<scene_id>/`` with scene.ply, cameras.json, images/ and masks/."""
    if n_views < 2:
        raise ValueError("a demo scene needs at least two views")
    scene_dir = Path(root) / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    obj = demo_object(seed)
    scene = GaussianScene.concatenate([obj, demo_backdrop(seed + 1)], scene_id=scene_id)
    save_scene(scene, scene_dir / "scene.ply")

    rng = np.random.default_rng(seed + 2)
    views = []
    for i, (intr, pose) in enumerate(ring_cameras(n_views, size)):
        img, _ = render(scene, pose, intr)
        gt = np.clip(img + GT_NOISE_SIGMA * rng.standard_normal(img.shape), 0, 1)
        _, obj_depth = render(obj, pose, intr)
        image, mask = f"images/{i:04d}.png", f"masks/{i:04d}.png"
        write_png(scene_dir / image, gt)
        write_png(scene_dir / mask, (obj_depth.opacity > MASK_THRESHOLD).astype(np.float64))
        views.append(CameraView(i, intr, pose, image=image, mask=mask))
    save_cameras(SceneCameras(scene_id, tuple(views)), scene_dir / "cameras.json")
    return scene_dir
