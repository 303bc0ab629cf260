"""Gaussian scenes, cameras and view-dependent color.

Scenes are stored structure-of-arrays (one numpy array per attribute) in
float64 and are read-only once constructed. Files follow the usual 3DGS PLY
export layout: ``x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3``
with log-scales and opacity logits.

Camera convention: poses are world-to-camera, right-handed, camera looks
down +z, image x to the right and image y down. Pixel ``(row i, col j)`` sits
at image coordinate ``(x=j, y=i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.spatial.transform import Rotation

SH_DEGREE = 3
SH_COUNT = (SH_DEGREE + 1) ** 2

# Real spherical harmonics basis constants (3DGS sign convention).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

QUAT_TOL = 1e-6

REQUIRED_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


class SceneFormatError(ValueError):
    """The PLY file does not follow the expected Gaussian layout."""


class SceneDataError(ValueError):
    """The PLY file parsed but holds unusable values."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Normalize (..., 4) quaternions, leaving already-unit ones bit-identical."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    off = np.abs(norm - 1.0) > QUAT_TOL
    return np.where(off, q / np.where(norm == 0, 1.0, norm), q)


def quat_to_matrix(q) -> np.ndarray:
    """(w, x, y, z) quaternion(s) to rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    return Rotation.from_quat(q, scalar_first=True).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    q = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat(scalar_first=True)
    # Canonical hemisphere keeps serialized poses stable.
    return q if q[0] >= 0 else -q


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} frame"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform ``X_cam = R @ X_world + t``."""

    rotation: np.ndarray  # (w, x, y, z)
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > QUAT_TOL:
            raise ValueError(f"pose quaternion must be unit length, |q| = {n}")
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(np.reshape(self.translation, 3)))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t) -> "CameraPose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)) -> "CameraPose":
        """Camera at ``eye`` looking at ``target``; ``up`` is world-space image-up."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        # Image y points down, so the camera's y axis is -up.
        right = np.cross(-np.asarray(up, dtype=np.float64), forward)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls.from_matrix(R, -R @ eye)

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.matrix.T @ self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(normalize_quaternions(np.asarray(d["rotation"], dtype=np.float64)),
                   np.asarray(d["translation"], dtype=np.float64))

    def allclose(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0)
                    and np.allclose(self.translation, other.translation, atol=atol, rtol=0))


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPrimitive:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh_coeffs: np.ndarray  # (16, 3)


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """An immutable set of Gaussian primitives.

    Attributes are parallel arrays: ``positions (N, 3)``, ``scales (N, 3)``
    (linear standard deviations), ``rotations (N, 4)`` unit ``wxyz``
    quaternions, ``opacities (N,)`` in [0, 1] and ``sh (N, 16, 3)``.
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    scene_id: str = "scene"
    source_path: str = ""
    bounding_box: tuple = field(init=False)

    def __post_init__(self):
        n = len(self.positions)
        if n == 0:
            raise SceneDataError("scene has no primitives")
        shapes = {
            "positions": (n, 3), "scales": (n, 3), "rotations": (n, 4),
            "opacities": (n,), "sh": (n, SH_COUNT, 3),
        }
        for name, shape in shapes.items():
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise SceneDataError(f"{name} has shape {arr.shape}, expected {shape}")
            bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
            if bad.any():
                raise SceneDataError(f"non-finite {name} at primitive {int(np.argmax(bad))}")
            object.__setattr__(self, name, arr)
        if (self.scales <= 0).any():
            raise SceneDataError(f"non-positive scale at primitive {int(np.argmax((self.scales <= 0).any(1)))}")
        if ((self.opacities < 0) | (self.opacities > 1)).any():
            raise SceneDataError("opacity outside [0, 1]")
        norms = np.linalg.norm(self.rotations, axis=1)
        if (np.abs(norms - 1.0) > QUAT_TOL).any():
            raise SceneDataError(f"non-unit quaternion at primitive {int(np.argmax(np.abs(norms - 1) > QUAT_TOL))}")
        bbox = (_frozen(self.positions.min(axis=0)), _frozen(self.positions.max(axis=0)))
        object.__setattr__(self, "bounding_box", bbox)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, k: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.positions[k], self.scales[k], self.rotations[k],
                                 float(self.opacities[k]), self.sh[k])

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        return (self[k] for k in range(len(self)))

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return list(self)

    def subset(self, index, scene_id: str | None = None) -> "GaussianScene":
        return GaussianScene(self.positions[index], self.scales[index], self.rotations[index],
                             self.opacities[index], self.sh[index],
                             scene_id=scene_id or self.scene_id, source_path=self.source_path)

    @classmethod
    def concatenate(cls, scenes: list["GaussianScene"], scene_id: str) -> "GaussianScene":
        cat = lambda name: np.concatenate([getattr(s, name) for s in scenes])  # noqa: E731
        return cls(cat("positions"), cat("scales"), cat("rotations"), cat("opacities"),
                   cat("sh"), scene_id=scene_id)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _logit(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def load_scene(path, scene_id: str | None = None) -> GaussianScene:
    """Read a binary 3DGS PLY file.

    Log-scales are exponentiated, opacity logits go through a sigmoid and
    quaternions are normalized. Lower SH degrees are zero-padded to degree 3.

    Raises:
        SceneFormatError: a required vertex property is missing.
        SceneDataError: a value is non-finite (the message names the primitive).
    """
    path = Path(path)
    ply = PlyData.read(str(path))
    if "vertex" not in ply:
        raise SceneFormatError(f"{path}: no 'vertex' element")
    v = ply["vertex"].data
    names = v.dtype.names
    for prop in REQUIRED_PROPERTIES:
        if prop not in names:
            raise SceneFormatError(f"{path}: missing required property '{prop}'")
    n = len(v)

    def cols(*props):
        return np.stack([np.asarray(v[p], dtype=np.float64) for p in props], axis=1)

    rest_names = sorted((p for p in names if p.startswith("f_rest_")), key=lambda p: int(p[7:]))
    n_rest = len(rest_names)
    if n_rest % 3 or (n_rest // 3 + 1) not in (1, 4, 9, 16):
        raise SceneFormatError(f"{path}: unexpected f_rest count {n_rest}")
    per_channel = n_rest // 3
    sh = np.zeros((n, SH_COUNT, 3))
    sh[:, 0, :] = cols("f_dc_0", "f_dc_1", "f_dc_2")
    if per_channel:
        # Stored channel-major: f_rest_{c * per_channel + i}.
        rest = cols(*rest_names).reshape(n, 3, per_channel).transpose(0, 2, 1)
        sh[:, 1:1 + per_channel, :] = rest

    raw = {
        "positions": cols("x", "y", "z"),
        "scales": cols("scale_0", "scale_1", "scale_2"),
        "rotations": cols("rot_0", "rot_1", "rot_2", "rot_3"),
        "opacities": np.asarray(v["opacity"], dtype=np.float64),
        "sh": sh,
    }
    for name, arr in raw.items():
        bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
        if bad.any():
            raise SceneDataError(f"{path}: non-finite {name} at primitive {int(np.argmax(bad))}")
    norms = np.linalg.norm(raw["rotations"], axis=1)
    if (norms == 0).any():
        raise SceneDataError(f"{path}: zero quaternion at primitive {int(np.argmax(norms == 0))}")

    return GaussianScene(
        positions=raw["positions"],
        scales=np.exp(raw["scales"]),
        rotations=normalize_quaternions(raw["rotations"]),
        opacities=_sigmoid(raw["opacities"]),
        sh=sh,
        scene_id=scene_id or path.parent.name or path.stem,
        source_path=str(path),
    )


def save_scene(scene: GaussianScene, path) -> None:
    """Write ``scene`` as a binary little-endian 3DGS PLY (float32, degree 3)."""
    n = len(scene)
    rest_count = (SH_COUNT - 1) * 3
    props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(rest_count)]
             + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, rest_count)
    columns = np.concatenate(
        [
            scene.positions,
            np.zeros((n, 3)),
            scene.sh[:, 0, :],
            rest,
            _logit(scene.opacities)[:, None],
            np.log(scene.scales),
            scene.rotations,
        ],
        axis=1,
    ).astype(np.float32)
    data = np.empty(n, dtype=[(p, "<f4") for p in props])
    for i, p in enumerate(props):
        data[p] = columns[:, i]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(data, "vertex")], byte_order="<").write(str(path))


def rgb_to_sh_dc(rgb) -> np.ndarray:
    """DC coefficient that makes ``eval_sh`` return ``rgb`` in every direction."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def make_synthetic_scene(seed: int, count: int, extent: float,
                         view_dependence: float = 0.0,
                         scene_id: str | None = None) -> GaussianScene:
    """Random scene of ``count`` primitives inside ``[-extent, extent]^3``.

    Scales are log-uniform in ``[extent/200, extent/20]``, opacities uniform
    in ``[0.2, 1.0]`` and colors uniform; higher SH bands are zero unless
    ``view_dependence`` gives them a normal amplitude.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not extent > 0:
        raise ValueError("extent must be > 0")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-extent, extent, size=(count, 3))
    scales = np.exp(rng.uniform(np.log(extent / 200), np.log(extent / 20), size=(count, 3)))
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opacities = rng.uniform(0.2, 1.0, size=count)
    sh = np.zeros((count, SH_COUNT, 3))
    sh[:, 0, :] = rgb_to_sh_dc(rng.uniform(0.0, 1.0, size=(count, 3)))
    if view_dependence:
        sh[:, 1:, :] = view_dependence * rng.normal(size=(count, SH_COUNT - 1, 3))
    return GaussianScene(positions, scales, q, opacities, sh,
                         scene_id=scene_id or f"synthetic-{seed}")


def sh_basis(directions) -> np.ndarray:
    """Degree-3 real SH basis at unit ``directions (..., 3)`` -> ``(..., 16)``."""
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    return np.stack(
        [
            np.full_like(x, SH_C0),
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * xy,
            SH_C2[1] * yz,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * xz,
            SH_C2[4] * (xx - yy),
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * xy * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ],
        axis=-1,
    )


def eval_sh(direction, sh_coeffs) -> np.ndarray:
    """RGB from degree-3 SH coefficients, offset by 0.5 and clamped at 0.

    Broadcasts: ``direction (..., 3)`` with ``sh_coeffs (..., 16, 3)``.
    """
    basis = sh_basis(direction)
    rgb = np.einsum("...k,...kc->...c", basis, np.asarray(sh_coeffs, dtype=np.float64)) + 0.5
    return np.maximum(rgb, 0.0)
