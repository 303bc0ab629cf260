"""Motion blur synthesis from sub-frame renders.

Sub-frames are averaged in linear space and mapped back through the camera
response function. Rigid object motion is simulated by blurring the scene
along two trajectories and matting them with a motion-averaged object mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .render import NEAR_PLANE, DepthMap, render
from .scene import CameraIntrinsics, CameraPose, GaussianScene
from .seeding import derive_seed
from .trajectory import (
    DEFAULT_SUBFRAMES,
    MotionTrajectory,
    build_trajectory,
    middle_pose,
    sample_curve_params,
)

CRFS = ("srgb", "gamma2.2")


def crf_inverse(y, crf: str = "srgb") -> np.ndarray:
    """Display (sRGB) values to linear radiance. Inputs are clamped to [0, 1]."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    if crf == "srgb":
        return np.where(y <= 0.04045, y / 12.92, ((y + 0.055) / 1.055) ** 2.4)
    if crf == "gamma2.2":
        return y ** 2.2
    raise ValueError(f"unknown CRF {crf!r}")


def crf_forward(x, crf: str = "srgb") -> np.ndarray:
    """Linear radiance to display values. Inputs are clamped to [0, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if crf == "srgb":
        return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)
    if crf == "gamma2.2":
        return x ** (1.0 / 2.2)
    raise ValueError(f"unknown CRF {crf!r}")


def accumulate_blur(frames: Iterable[np.ndarray], crf: str = "srgb") -> np.ndarray:
    """``g(mean_t g^-1(frame_t))`` over a stream of sRGB frames.

    Frames are summed in iteration order, so the result does not depend on
    how they were produced.
    """
    total = None
    count = 0
    for frame in frames:
        lin = crf_inverse(frame, crf)
        if total is None:
            total = lin.copy()
        elif lin.shape != total.shape:
            raise ValueError(f"frame {count} has shape {lin.shape}, expected {total.shape}")
        else:
            total += lin
        count += 1
    if count == 0:
        raise ValueError("accumulate_blur needs at least one frame")
    return crf_forward(total / count, crf)


def _pixel_grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample a 2D ``image`` at float pixel coordinates; outside the frame gives 0."""
    h, w = image.shape
    eps = 1e-6
    inside = (u >= -eps) & (u <= w - 1 + eps) & (v >= -eps) & (v <= h - 1 + eps)
    u = np.clip(np.where(inside, u, 0.0), 0.0, w - 1)
    v = np.clip(np.where(inside, v, 0.0), 0.0, h - 1)
    x0 = np.minimum(np.floor(u).astype(int), w - 1)
    y0 = np.minimum(np.floor(v).astype(int), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = u - x0, v - y0
    out = ((1 - fx) * (1 - fy) * image[y0, x0] + fx * (1 - fy) * image[y0, x1]
           + (1 - fx) * fy * image[y1, x0] + fx * fy * image[y1, x1])
    return np.where(inside, out, 0.0)


def warp_mask(mask: np.ndarray, depth: DepthMap, pose_src: CameraPose, pose_dst: CameraPose,
              intr: CameraIntrinsics) -> np.ndarray:
    """Backward-warp ``mask`` (defined in ``pose_src``) into ``pose_dst``.

    Every destination pixel is lifted with the destination depth, moved into
    the source camera and bilinearly sampled. Invalid depth, points behind the
    source camera and samples outside the frame yield 0.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != depth.depth.shape:
        raise ValueError(f"mask {mask.shape} and depth {depth.depth.shape} differ in shape")
    h, w = mask.shape
    xs, ys = _pixel_grid(h, w)
    z = depth.depth
    cam_dst = np.stack([(xs - intr.cx) / intr.fx * z, (ys - intr.cy) / intr.fy * z, z], axis=-1)
    world = (cam_dst - pose_dst.translation) @ pose_dst.matrix
    cam_src = world @ pose_src.matrix.T + pose_src.translation
    zs = cam_src[..., 2]
    ok = depth.valid & (zs > NEAR_PLANE)
    zs_safe = np.where(ok, zs, 1.0)
    u = intr.fx * cam_src[..., 0] / zs_safe + intr.cx
    v = intr.fy * cam_src[..., 1] / zs_safe + intr.cy
    out = bilinear_sample(mask, np.where(ok, u, -1e9), np.where(ok, v, -1e9))
    return np.clip(out, 0.0, 1.0)


def object_alpha(mask: np.ndarray, traj: MotionTrajectory, depths: Iterable[DepthMap],
                 intr: CameraIntrinsics) -> np.ndarray:
    """Square root of the mean of ``mask`` warped to every sub-frame of ``traj``.

    ``mask`` lives in the trajectory's middle view. Pixels with invalid depth
    count as 0 in the mean.
    """
    src = middle_pose(traj)
    total = np.zeros(np.shape(mask))
    count = 0
    for pose, depth in zip(traj.poses, depths, strict=True):
        total += warp_mask(mask, depth, src, pose, intr)
        count += 1
    return np.clip(np.sqrt(total / count), 0.0, 1.0)


def composite_rigid(b_obj: np.ndarray, b_bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Alpha matte ``alpha * b_obj + (1 - alpha) * b_bg``."""
    b_obj = np.asarray(b_obj, dtype=np.float64)
    b_bg = np.asarray(b_bg, dtype=np.float64)
    if b_obj.shape != b_bg.shape or np.shape(alpha) != b_obj.shape[:2]:
        raise ValueError(f"shape mismatch: {b_obj.shape}, {b_bg.shape}, alpha {np.shape(alpha)}")
    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)[..., None]
    return np.clip(a * b_obj + (1.0 - a) * b_bg, 0.0, 1.0)


def render_blur(scene: GaussianScene, traj: MotionTrajectory, intr: CameraIntrinsics,
                crf: str = "srgb", background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Render every sub-frame of ``traj`` and accumulate them."""
    return accumulate_blur((render(scene, p, intr, background)[0] for p in traj.poses), crf)


def render_rigid_blur(scene: GaussianScene, mask: np.ndarray, traj_obj: MotionTrajectory,
                      traj_bg: MotionTrajectory, intr: CameraIntrinsics, crf: str = "srgb",
                      background=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Object blurred along ``traj_obj``, background along ``traj_bg``.

    Returns ``(blurry, alpha)``; the object renders also provide the depth
    used to warp ``mask``.
    """
    depths = []

    def object_frames():
        for pose in traj_obj.poses:
            img, depth = render(scene, pose, intr, background)
            depths.append(depth)
            yield img

    b_obj = accumulate_blur(object_frames(), crf)
    alpha = object_alpha(mask, traj_obj, depths, intr)
    b_bg = b_obj if traj_bg is traj_obj else render_blur(scene, traj_bg, intr, crf, background)
    return composite_rigid(b_obj, b_bg, alpha), alpha


@dataclass
class SynthesisConfig:
    M: int = DEFAULT_SUBFRAMES
    n_trajectories: int = 2
    rigid_probability: float = 0.0
    translation_scale: float = 1.0
    crf: str = "srgb"
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.M < 1 or self.M % 2 == 0:
            raise ValueError(f"M must be odd and positive, got {self.M}")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not 0.0 <= self.rigid_probability <= 1.0:
            raise ValueError("rigid_probability must lie in [0, 1]")
        if self.crf not in CRFS:
            raise ValueError(f"unknown CRF {self.crf!r}")


@dataclass
class BlurPair:
    """One sharp image with its blurry counterparts.

    ``trajectories[k]`` is the camera (background) path of ``blurry[k]``;
    ``object_trajectories[k]`` and ``object_alpha[k]`` are set when that image
    carries rigid object motion.
    """

    sharp: np.ndarray
    blurry: list
    trajectories: list
    object_trajectories: list = field(default_factory=list)
    object_alpha: list = field(default_factory=list)
    scale_factor: Fraction = Fraction(1)
    noise_params: object = None
    seed: int | None = None

    def __post_init__(self):
        if not self.blurry:
            raise ValueError("a BlurPair needs at least one blurry image")
        for img in self.blurry:
            if img.shape != self.sharp.shape:
                raise ValueError(f"blurry {img.shape} does not match sharp {self.sharp.shape}")
        if not self.object_trajectories:
            self.object_trajectories = [None] * len(self.blurry)
        if not self.object_alpha:
            self.object_alpha = [None] * len(self.blurry)

    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "scale_factor": str(self.scale_factor),
            "noise": None if self.noise_params is None else self.noise_params.to_dict(),
            "blurry": [
                {
                    "trajectory": t.to_dict(),
                    "object_trajectory": None if o is None else o.to_dict(),
                }
                for t, o in zip(self.trajectories, self.object_trajectories)
            ],
        }


def _draw_trajectory(rng, anchor, config: SynthesisConfig, seed: int) -> MotionTrajectory:
    params = sample_curve_params(rng)
    return build_trajectory(seed, params, anchor, config.M, config.translation_scale)


def synthesize_pair(scene: GaussianScene, anchor: CameraPose, intr: CameraIntrinsics,
                    config: SynthesisConfig, seed: int,
                    mask: np.ndarray | None = None) -> BlurPair:
    """Sharp render at ``anchor`` plus ``config.n_trajectories`` blurry renders.

    Blurry image ``k`` draws everything from ``derive_seed(seed, k)``. With a
    ``mask``, each image independently becomes a rigid-motion composite with
    probability ``config.rigid_probability``.
    """
    sharp, _ = render(scene, anchor, intr, config.background)
    blurry, trajs, obj_trajs, alphas = [], [], [], []
    for k in range(config.n_trajectories):
        traj_seed = derive_seed(seed, k)
        rng = np.random.default_rng(traj_seed)
        rigid = rng.random() < config.rigid_probability and mask is not None
        cam = _draw_trajectory(rng, anchor, config, derive_seed(traj_seed, "camera"))
        if rigid:
            obj = _draw_trajectory(rng, anchor, config, derive_seed(traj_seed, "object"))
            img, alpha = render_rigid_blur(scene, mask, obj, cam, intr, config.crf,
                                           config.background)
        else:
            obj, alpha = None, None
            img = render_blur(scene, cam, intr, config.crf, config.background)
        blurry.append(img)
        trajs.append(cam)
        obj_trajs.append(obj)
        alphas.append(alpha)
    return BlurPair(sharp, blurry, trajs, obj_trajs, alphas, seed=seed)
