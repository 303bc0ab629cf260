"""Per-scene camera files.

``cameras.json`` holds one record per view::

    {"scene_id": "chair-01",
     "views": [{"index": 0,
                "intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..},
                "pose": {"rotation": [w, x, y, z], "translation": [tx, ty, tz]},
                "image": "images/0000.png",
                "mask": "masks/0000.png"}]}

Poses are world-to-camera with x right, y down and z forward. ``image`` and
``mask`` are optional paths relative to the scene directory.

A COLMAP text export maps directly: each ``images.txt`` line
``QW QX QY QZ TX TY TZ`` is already a world-to-camera pose in the same
convention, and PINHOLE (``fx fy cx cy``) or SIMPLE_PINHOLE (``f cx cy``)
entries in ``cameras.txt`` give the intrinsics. ``cameras_from_colmap`` does
this conversion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import CameraIntrinsics, CameraPose, normalize_quaternions


@dataclass(frozen=True)
class CameraView:
    index: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: str | None = None
    mask: str | None = None

    def to_dict(self) -> dict:
        d = {"index": self.index, "intrinsics": self.intrinsics.to_dict(),
             "pose": self.pose.to_dict()}
        if self.image is not None:
            d["image"] = self.image
        if self.mask is not None:
            d["mask"] = self.mask
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(int(d["index"]), CameraIntrinsics.from_dict(d["intrinsics"]),
                   CameraPose.from_dict(d["pose"]), d.get("image"), d.get("mask"))


@dataclass(frozen=True)
class SceneCameras:
    scene_id: str
    views: tuple

    def __len__(self) -> int:
        return len(self.views)

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "views": [v.to_dict() for v in self.views]}


def load_cameras(path) -> SceneCameras:
    path = Path(path)
    with open(path) as f:
        d = json.load(f)
    try:
        views = tuple(CameraView.from_dict(v) for v in d["views"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: malformed camera record ({e})") from e
    indices = [v.index for v in views]
    if len(set(indices)) != len(indices):
        raise ValueError(f"{path}: duplicate view indices")
    return SceneCameras(d.get("scene_id", path.parent.name), views)


def save_cameras(cams: SceneCameras, path) -> None:
    Path(path).write_text(json.dumps(cams.to_dict(), indent=1) + "\n")


def cameras_from_colmap(cameras_txt, images_txt, scene_id: str) -> SceneCameras:
    """Convert COLMAP ``cameras.txt`` / ``images.txt`` text exports."""
    intr = {}
    for line in Path(cameras_txt).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cam_id, model, w, h, *params = line.split()
        p = [float(x) for x in params]
        if model == "PINHOLE":
            fx, fy, cx, cy = p[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = p[0]
            cx, cy = p[1:3]
        else:
            raise ValueError(f"unsupported COLMAP camera model {model}")
        intr[cam_id] = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))

    # images.txt alternates pose lines with 2D point lines, which may be empty.
    lines = [ln for ln in Path(images_txt).read_text().splitlines() if not ln.startswith("#")]
    records = []
    for line in lines[::2]:
        if not line.strip():
            continue
        parts = line.split()
        qvec = [float(x) for x in parts[1:5]]
        tvec = [float(x) for x in parts[5:8]]
        pose = CameraPose(normalize_quaternions(np.array(qvec)), tvec)
        records.append((parts[9], intr[parts[8]], pose))
    records.sort(key=lambda r: r[0])
    views = tuple(CameraView(i, k, p, image=f"images/{name}")
                  for i, (name, k, p) in enumerate(records))
    return SceneCameras(scene_id, views)
