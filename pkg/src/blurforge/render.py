"""Forward rendering of Gaussian scenes.

Two paths share one projection step:

* :func:`render` -- tile-based rasterizer (16x16 tiles, per-tile primitive
  lists, bounded footprint, early ray termination).
* :func:`render_reference` -- naive front-to-back blend of every primitive at
  every pixel. It exists to check :func:`render`.

Both return a display-referred RGB image ``(H, W, 3)`` clamped to [0, 1] and a
:class:`DepthMap`.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import CameraIntrinsics, CameraPose, GaussianPrimitive, GaussianScene, eval_sh, quat_to_matrix

NEAR_PLANE = 0.01
LOWPASS = 0.3
ALPHA_MAX = 0.99
T_MIN = 1e-4
TILE = 16
DEPTH_VALID_OPACITY = 0.5
# Footprint half-width in standard deviations of the 2D Gaussian.
CUTOFF_SIGMA = 3.0
# Opacity-aware floor: weights this small may be dropped.
CUTOFF_ALPHA = 1e-5
FRUSTUM_MARGIN = 1.3

DEPTH_MAGIC = b"BFDEPTH\x00"


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (H, W); 0 where invalid
    valid: np.ndarray  # (H, W) bool
    opacity: np.ndarray  # (H, W) accumulated alpha

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class SplattedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    color: np.ndarray
    opacity: float


@dataclass(frozen=True)
class Projection:
    """Depth-sorted screen-space Gaussians (parallel arrays)."""

    index: np.ndarray  # original primitive index
    mean2d: np.ndarray  # (K, 2)
    cov2d: np.ndarray  # (K, 2, 2)
    conic: np.ndarray  # (K, 3): a, b, c of the inverse covariance
    depth: np.ndarray  # (K,)
    color: np.ndarray  # (K, 3)
    opacity: np.ndarray  # (K,)
    cutoff: np.ndarray  # (K,) footprint radius in standard deviations
    radius: np.ndarray  # (K,) footprint half-width in pixels

    def __len__(self) -> int:
        return len(self.index)


def covariance_3d(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """``R S S^T R^T`` for each primitive."""
    R = quat_to_matrix(rotations).reshape(-1, 3, 3)
    M = R * np.asarray(scales, dtype=np.float64).reshape(-1, 1, 3)
    return M @ M.transpose(0, 2, 1)


def _project_arrays(positions, scales, rotations, opacities, sh, pose: CameraPose,
                    intr: CameraIntrinsics):
    W = pose.matrix
    cam = positions @ W.T + pose.translation
    keep = cam[:, 2] > NEAR_PLANE
    cam = cam[keep]
    z = cam[:, 2]
    # Off-screen primitives get the Jacobian of the nearest point of a slightly
    # widened frustum; otherwise those near the side planes explode in size.
    lim_x = FRUSTUM_MARGIN * intr.width / (2 * intr.fx)
    lim_y = FRUSTUM_MARGIN * intr.height / (2 * intr.fy)
    x = np.clip(cam[:, 0] / z, -lim_x, lim_x) * z
    y = np.clip(cam[:, 1] / z, -lim_y, lim_y) * z
    J = np.zeros((len(z), 2, 3))
    J[:, 0, 0] = intr.fx / z
    J[:, 0, 2] = -intr.fx * x / (z * z)
    J[:, 1, 1] = intr.fy / z
    J[:, 1, 2] = -intr.fy * y / (z * z)
    T = J @ W
    cov = T @ covariance_3d(scales[keep], rotations[keep]) @ T.transpose(0, 2, 1)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1)) + LOWPASS * np.eye(2)
    mean2d = np.stack([intr.fx * cam[:, 0] / z + intr.cx, intr.fy * cam[:, 1] / z + intr.cy], axis=1)
    view_dirs = positions[keep] - pose.center
    view_dirs /= np.linalg.norm(view_dirs, axis=1, keepdims=True)
    color = eval_sh(view_dirs, sh[keep])
    return np.flatnonzero(keep), mean2d, cov, z, color, opacities[keep]


def project_gaussian(g: GaussianPrimitive, pose: CameraPose,
                     intr: CameraIntrinsics) -> SplattedGaussian | None:
    """EWA projection of one primitive; ``None`` if it is behind the near plane."""
    idx, mean2d, cov, z, color, opac = _project_arrays(
        np.reshape(g.position, (1, 3)), np.reshape(g.scale, (1, 3)),
        np.reshape(g.rotation, (1, 4)), np.array([g.opacity]),
        np.reshape(g.sh_coeffs, (1, -1, 3)), pose, intr)
    if len(idx) == 0:
        return None
    return SplattedGaussian(mean2d[0], cov[0], float(z[0]), color[0], float(opac[0]))


def project_scene(scene: GaussianScene, pose: CameraPose, intr: CameraIntrinsics) -> Projection:
    """Project every visible primitive and sort front to back by view depth."""
    idx, mean2d, cov, z, color, opac = _project_arrays(
        scene.positions, scene.scales, scene.rotations, scene.opacities, scene.sh, pose, intr)
    order = np.argsort(z, kind="stable")
    cov = cov[order]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    # Beyond this Mahalanobis radius the weight is below CUTOFF_ALPHA.
    k_alpha = np.sqrt(2.0 * np.log(np.maximum(opac[order] / CUTOFF_ALPHA, 1.0)))
    k = np.maximum(CUTOFF_SIGMA, k_alpha)
    return Projection(
        index=idx[order], mean2d=mean2d[order], cov2d=cov, conic=conic,
        depth=z[order], color=color[order], opacity=opac[order],
        cutoff=k, radius=k * np.sqrt(lam_max),
    )


def _mahalanobis_sq(conic, mean2d, px, py):
    """Squared Mahalanobis distance, shape (K, P)."""
    dx = px[None, :] - mean2d[:, 0:1]
    dy = py[None, :] - mean2d[:, 1:2]
    return conic[:, 0:1] * dx * dx + 2.0 * conic[:, 1:2] * dx * dy + conic[:, 2:3] * dy * dy


def _finish(color, acc, depth_sum, background, shape):
    h, w = shape
    image = color + (1.0 - acc)[..., None] * np.asarray(background, dtype=np.float64)
    valid = acc > DEPTH_VALID_OPACITY
    depth = np.where(valid, depth_sum / np.where(acc > 0, acc, 1.0), 0.0)
    return (np.clip(image.reshape(h, w, 3), 0.0, 1.0),
            DepthMap(depth.reshape(h, w), valid.reshape(h, w), acc.reshape(h, w)))


def _render_tile(proj: Projection, x0, x1, y0, y1):
    m, r = proj.mean2d, proj.radius
    hit = np.flatnonzero((m[:, 0] + r >= x0) & (m[:, 0] - r <= x1 - 1)
                         & (m[:, 1] + r >= y0) & (m[:, 1] - r <= y1 - 1))
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px, py = xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)
    n_pix = len(px)
    if len(hit) == 0:
        return np.zeros((n_pix, 3)), np.zeros(n_pix), np.zeros(n_pix)
    d2 = _mahalanobis_sq(proj.conic[hit], proj.mean2d[hit], px, py)
    alpha = np.minimum(ALPHA_MAX, proj.opacity[hit, None] * np.exp(-0.5 * d2))
    alpha[d2 > proj.cutoff[hit, None] ** 2] = 0.0
    trans = np.cumprod(1.0 - alpha, axis=0)
    before = np.vstack([np.ones((1, n_pix)), trans[:-1]])
    # A pixel stops blending once its transmittance has dropped below T_MIN.
    weight = np.where(before >= T_MIN, alpha * before, 0.0)
    return weight.T @ proj.color[hit], weight.sum(axis=0), weight.T @ proj.depth[hit]


def render(scene: GaussianScene, pose: CameraPose, intr: CameraIntrinsics,
           background=(0.0, 0.0, 0.0), workers: int = 1) -> tuple[np.ndarray, DepthMap]:
    """Tile-based alpha-blended rendering.

    Primitives are sorted once by view depth; each 16x16 tile keeps those whose
    footprint (``CUTOFF_SIGMA`` standard deviations, widened so no dropped
    weight exceeds ``CUTOFF_ALPHA``) overlaps it. Tiles write disjoint regions,
    so ``workers > 1`` renders them on a thread pool with identical output.
    """
    proj = project_scene(scene, pose, intr)
    return _rasterize(proj, intr, background, workers)


def _rasterize(proj: Projection, intr: CameraIntrinsics, background, workers: int = 1):
    h, w = intr.height, intr.width
    color = np.zeros((h, w, 3))
    acc = np.zeros((h, w))
    depth_sum = np.zeros((h, w))
    tiles = [(x0, min(x0 + TILE, w), y0, min(y0 + TILE, h))
             for y0 in range(0, h, TILE) for x0 in range(0, w, TILE)]

    def run(tile):
        x0, x1, y0, y1 = tile
        c, a, d = _render_tile(proj, x0, x1, y0, y1)
        color[y0:y1, x0:x1] = c.reshape(y1 - y0, x1 - x0, 3)
        acc[y0:y1, x0:x1] = a.reshape(y1 - y0, x1 - x0)
        depth_sum[y0:y1, x0:x1] = d.reshape(y1 - y0, x1 - x0)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, tiles))
    else:
        for tile in tiles:
            run(tile)
    return _finish(color.reshape(-1, 3), acc.ravel(), depth_sum.ravel(), background, (h, w))


def blend_weights(scene: GaussianScene, pose: CameraPose, intr: CameraIntrinsics):
    """Per-primitive blend weights ``alpha_k * prod_{j<k}(1 - alpha_j)``.

    Returns ``(projection, weights)`` with weights shaped ``(K, H, W)`` in
    front-to-back order. No footprint cutoff, no early termination.
    """
    proj = project_scene(scene, pose, intr)
    h, w = intr.height, intr.width
    ys, xs = np.mgrid[0:h, 0:w]
    px, py = xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)
    weights = np.zeros((len(proj), h * w))
    transmittance = np.ones(h * w)
    for k in range(len(proj)):
        d2 = _mahalanobis_sq(proj.conic[k:k + 1], proj.mean2d[k:k + 1], px, py)[0]
        alpha = np.minimum(ALPHA_MAX, proj.opacity[k] * np.exp(-0.5 * d2))
        weights[k] = alpha * transmittance
        transmittance = transmittance * (1.0 - alpha)
    return proj, weights.reshape(len(proj), h, w)


def render_reference(scene: GaussianScene, pose: CameraPose, intr: CameraIntrinsics,
                     background=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, DepthMap]:
    """Brute-force counterpart of :func:`render` used as its oracle."""
    proj, weights = blend_weights(scene, pose, intr)
    h, w = intr.height, intr.width
    color = np.zeros((h * w, 3))
    acc = np.zeros(h * w)
    depth_sum = np.zeros(h * w)
    for k in range(len(proj)):
        wk = weights[k].ravel()
        color += wk[:, None] * proj.color[k]
        acc += wk
        depth_sum += wk * proj.depth[k]
    return _finish(color, acc, depth_sum, background, (h, w))


def write_depth(depth: DepthMap, path) -> None:
    """float32 depth dump: 8-byte magic, uint32 width, uint32 height, then rows."""
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC + struct.pack("<II", depth.width, depth.height))
        f.write(np.ascontiguousarray(depth.depth, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != DEPTH_MAGIC:
        raise ValueError(f"{path}: not a depth dump")
    width, height = struct.unpack("<II", raw[8:16])
    return np.frombuffer(raw[16:], dtype="<f4").reshape(height, width).copy()
