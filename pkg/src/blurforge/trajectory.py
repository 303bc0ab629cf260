"""Random-order Bezier camera trajectories.

A trajectory starts as a straight 6DOF segment (translation plus axis-angle
rotation in degrees) centered on zero, gets ``n - 1`` perturbed interior
control points, is sampled at ``M`` uniform curve parameters and finally
shifted so that the sample at ``tau = 0.5`` is exactly the anchor pose.

Offsets are expressed in the anchor camera's frame: a sample with offset
``(dt, dr)`` has camera center ``C_anchor + R_anchor^T dt`` and is rotated by
``rotvec(dr)`` about its own axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.transform import Rotation

from .scene import CameraPose

ORDER_RANGE = (1, 5)
MAX_TRANSLATION = 0.7
MAX_ROTATION_DEG = 1.5
PERTURBATION = 0.25
DEFAULT_SUBFRAMES = 121


@dataclass(frozen=True)
class CurveParams:
    order: int
    delta_t: np.ndarray  # translation extent per axis, scene units
    delta_r: np.ndarray  # orientation shift per axis, degrees

    def __post_init__(self):
        dt = np.asarray(self.delta_t, dtype=np.float64).reshape(3)
        dr = np.asarray(self.delta_r, dtype=np.float64).reshape(3)
        if not ORDER_RANGE[0] <= int(self.order) <= ORDER_RANGE[1]:
            raise ValueError(f"curve order {self.order} outside {ORDER_RANGE}")
        if np.abs(dt).max() > MAX_TRANSLATION or np.abs(dr).max() > MAX_ROTATION_DEG:
            raise ValueError(f"curve extent out of bounds: delta_t={dt}, delta_r={dr}")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "delta_t", dt)
        object.__setattr__(self, "delta_r", dr)

    def to_dict(self) -> dict:
        return {"order": self.order, "delta_t": self.delta_t.tolist(),
                "delta_r": self.delta_r.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CurveParams":
        return cls(d["order"], d["delta_t"], d["delta_r"])


@dataclass(frozen=True)
class MotionTrajectory:
    """Sampled camera path.

    ``control_points`` and ``offsets`` are ``(., 6)`` arrays of
    ``(tx, ty, tz, rx, ry, rz)`` relative to the anchor, already aligned so
    that the curve passes through zero at ``tau = 0.5``. Translations are in
    curve units; ``translation_scale`` converts them to scene units.
    ``rotations (M, 4)`` and ``translations (M, 3)`` hold the world-to-camera
    sample poses; ``poses`` wraps them as ``CameraPose`` objects on first use.
    """

    params: CurveParams
    control_points: np.ndarray
    taus: np.ndarray
    offsets: np.ndarray
    rotations: np.ndarray = field(repr=False)
    translations: np.ndarray = field(repr=False)
    anchor: CameraPose
    seed: int | None = None
    translation_scale: float = 1.0

    @property
    def M(self) -> int:
        return len(self.taus)

    def pose(self, i: int) -> CameraPose:
        """Sample pose ``i``; samples with zero offset are the anchor itself."""
        if not self.offsets[i].any():
            return self.anchor
        return CameraPose(self.rotations[i], self.translations[i])

    @cached_property
    def poses(self) -> list:
        return [self.pose(i) for i in range(self.M)]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "M": self.M,
            "params": self.params.to_dict(),
            "translation_scale": self.translation_scale,
            "control_points": self.control_points.tolist(),
            "anchor": self.anchor.to_dict(),
        }


def sample_curve_params(rng: np.random.Generator) -> CurveParams:
    """Draw ``{n, delta_t, delta_r}``.

    ``n`` is uniform on 1..5, ``delta_t`` has an isotropic direction and a
    length uniform in [0, 0.7], and each ``delta_r`` component is uniform in
    [-1.5, 1.5] degrees.
    """
    order = int(rng.integers(ORDER_RANGE[0], ORDER_RANGE[1] + 1))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    length = rng.uniform(0.0, MAX_TRANSLATION)
    delta_r = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG, size=3)
    return CurveParams(order, direction * length, delta_r)


def de_casteljau(control_points: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Evaluate a Bezier curve with control points ``(n+1, D)`` at ``taus (M,)``."""
    t = np.asarray(taus, dtype=np.float64)[:, None, None]
    pts = np.broadcast_to(control_points, (len(t),) + control_points.shape)
    while pts.shape[1] > 1:
        pts = (1.0 - t) * pts[:, :-1] + t * pts[:, 1:]
    return pts[:, 0]


def apply_offset(anchor: CameraPose, offset: np.ndarray, translation_scale: float = 1.0) -> CameraPose:
    """Move ``anchor`` by a 6D offset expressed in its own camera frame."""
    offset = np.asarray(offset, dtype=np.float64)
    if not offset.any():
        return anchor
    q, t = offset_poses(anchor, offset[None], translation_scale)
    return CameraPose(q[0], t[0])


def offset_poses(anchor: CameraPose, offsets: np.ndarray,
                 translation_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Batch form of ``apply_offset``: ``(wxyz quaternions (M, 4), translations (M, 3))``.

    With ``R_off = rotvec(dr)`` the moved camera has ``R = R_off^T R_anchor``
    and ``t = R_off^T (t_anchor - scale * dt)``.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    inv_off = Rotation.from_rotvec(np.radians(offsets[:, 3:])).inv()
    rot = inv_off * Rotation.from_quat(anchor.rotation, scalar_first=True)
    q = rot.as_quat(scalar_first=True)
    q *= np.where(q[:, :1] < 0, -1.0, 1.0)
    t = inv_off.apply(anchor.translation - translation_scale * offsets[:, :3])
    return q, t


def subframe_taus(M: int) -> np.ndarray:
    if M < 1 or M % 2 == 0:
        raise ValueError(f"number of sub-frames must be odd and positive, got {M}")
    if M == 1:
        return np.array([0.5])
    return np.arange(M) / (M - 1)


def build_trajectory(rng: np.random.Generator | int, params: CurveParams, anchor: CameraPose,
                     M: int = DEFAULT_SUBFRAMES, translation_scale: float = 1.0) -> MotionTrajectory:
    """Build the Bezier trajectory for ``params`` around ``anchor``.

    The interior control points sit at the ``n - 1`` equal divisions of the
    straight segment from ``-delta/2`` to ``+delta/2`` and are jittered per
    axis by up to a quarter of the segment length (translation and rotation
    separately). Passing an integer seed records it on the trajectory.
    """
    taus = subframe_taus(M)
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        rng = np.random.default_rng(seed)

    n = params.order
    start = -0.5 * np.concatenate([params.delta_t, params.delta_r])
    end = -start
    control = start + (np.arange(n + 1) / n)[:, None] * (end - start)
    jitter = rng.uniform(-1.0, 1.0, size=(n - 1, 6))
    reach = PERTURBATION * np.repeat(
        [np.linalg.norm(params.delta_t), np.linalg.norm(params.delta_r)], 3)
    control[1:-1] += jitter * reach

    samples = de_casteljau(control, taus)
    center = samples[(M - 1) // 2].copy()
    samples -= center
    control -= center
    rotations, translations = offset_poses(anchor, samples, translation_scale)
    return MotionTrajectory(params, control, taus, samples, rotations, translations, anchor,
                            seed, float(translation_scale))


def middle_pose(traj: MotionTrajectory) -> CameraPose:
    """The pose at the middle of the exposure, used for the sharp image."""
    return traj.pose((traj.M - 1) // 2)


def trajectory_from_dict(d: dict) -> MotionTrajectory:
    """Rebuild a seeded trajectory from its JSON record."""
    if d.get("seed") is None:
        raise ValueError("only seeded trajectories can be rebuilt")
    return build_trajectory(int(d["seed"]), CurveParams.from_dict(d["params"]),
                            CameraPose.from_dict(d["anchor"]), int(d["M"]),
                            float(d.get("translation_scale", 1.0)))
