"""PSNR, SSIM and the per-scene reconstruction quality gate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
QA_THRESHOLD_DB = 3.0


def _check_shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; ``inf`` for identical images."""
    a, b = _check_shapes(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def capped(db: float) -> float:
    return min(float(db), PSNR_CAP)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable correlation over the first two axes, 'valid' region only.
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _check_shapes(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
    return float(s.mean())


@dataclass
class SceneQAReport:
    scene_id: str
    per_view_psnr: list  # [(view index, dB)]
    mean_psnr: float
    mean_ssim: float
    passed: bool
    threshold_db: float = QA_THRESHOLD_DB
    reason: str = ""
    threshold_rule: str = field(init=False)

    def __post_init__(self):
        self.threshold_rule = (
            f"fail if any held-out view is more than {self.threshold_db:g} dB below the mean PSNR")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "per_view_psnr": [[int(i), capped(p)] for i, p in self.per_view_psnr],
            "mean_psnr": capped(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "passed": self.passed,
            "threshold_db": self.threshold_db,
            "threshold_rule": self.threshold_rule,
            "reason": self.reason,
        }


def qa_decision(psnrs, threshold_db: float = QA_THRESHOLD_DB) -> tuple[bool, float]:
    """``(passed, mean)``: fail iff some view is strictly more than the threshold below the mean.

    Values are capped at ``PSNR_CAP`` first so a perfect view cannot make the
    mean infinite.
    """
    vals = np.array([capped(p) for p in psnrs])
    mean = float(vals.mean())
    return bool(not (vals < mean - threshold_db).any()), mean


def qa_filter_scene(renders, scene_id: str = "", view_indices=None,
                    threshold_db: float = QA_THRESHOLD_DB) -> SceneQAReport:
    """Gate a scene on held-out ``(ground truth, render)`` image pairs."""
    renders = list(renders)
    if len(renders) < 2:
        raise ValueError("QA needs at least two held-out views")
    indices = list(view_indices) if view_indices is not None else list(range(len(renders)))
    values = [psnr(gt, img) for gt, img in renders]
    passed, mean = qa_decision(values, threshold_db)
    mean_ssim = float(np.mean([ssim(gt, img) for gt, img in renders]))
    worst = min(values)
    reason = "" if passed else f"view PSNR {worst:.2f} dB is more than {threshold_db:g} dB below mean {mean:.2f} dB"
    return SceneQAReport(scene_id, list(zip(indices, values)), mean, mean_ssim, passed,
                         threshold_db, reason)
