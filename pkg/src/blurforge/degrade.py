"""Noise injection and multi-resolution augmentation.

Noise is added in linear (RAW-like) space as a heteroscedastic Gaussian with
variance ``shot_gain * x + read_sigma**2``. Downscaling always happens before
noise so that lower-resolution images carry full-strength noise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .blur import BlurPair, crf_forward, crf_inverse
from .seeding import derive_seed

ALLOWED_FACTORS = (Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 4))


@dataclass(frozen=True)
class NoiseParams:
    # Calibration knobs, not measured camera values.
    shot_gain: float = 1e-3
    read_sigma: float = 1e-3
    seed: int = 0
    poisson: bool = False

    def __post_init__(self):
        if self.shot_gain < 0 or self.read_sigma < 0:
            raise ValueError("noise parameters must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseParams":
        return cls(**{k: d[k] for k in ("shot_gain", "read_sigma", "seed", "poisson") if k in d})


def parse_factor(f) -> Fraction:
    """Accept ``1``, ``"1/2"``, ``0.25``, ``Fraction(1, 3)`` ..."""
    frac = Fraction(f).limit_denominator(16) if not isinstance(f, str) else Fraction(f)
    if frac not in ALLOWED_FACTORS:
        raise ValueError(f"unsupported scale factor {f}; use one of 1, 1/2, 1/3, 1/4")
    return frac


def add_noise(img: np.ndarray, p: NoiseParams, crf: str = "srgb") -> np.ndarray:
    """Poisson-Gaussian noise applied in linear space, seeded by ``p.seed``."""
    if p.shot_gain == 0 and p.read_sigma == 0:
        return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    x = crf_inverse(img, crf)
    rng = np.random.default_rng(p.seed)
    if p.poisson and p.shot_gain > 0:
        noisy = p.shot_gain * rng.poisson(x / p.shot_gain) + p.read_sigma * rng.standard_normal(x.shape)
    else:
        noisy = x + np.sqrt(p.shot_gain * x + p.read_sigma ** 2) * rng.standard_normal(x.shape)
    return crf_forward(np.clip(noisy, 0.0, 1.0), crf)


def center_crop(img: np.ndarray, divisor: int) -> np.ndarray:
    h, w = img.shape[:2]
    nh, nw = h - h % divisor, w - w % divisor
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]


def downscale(img: np.ndarray, factor, crf: str = "srgb") -> np.ndarray:
    """Box-filter downscale in linear space.

    Images whose size is not a multiple of the factor's denominator are
    center-cropped first.
    """
    factor = parse_factor(factor)
    d = factor.denominator
    if d == 1:
        return np.asarray(img, dtype=np.float64)
    lin = crf_inverse(center_crop(np.asarray(img), d), crf)
    h, w = lin.shape[:2]
    blocks = lin.reshape(h // d, d, w // d, d, *lin.shape[2:])
    return crf_forward(blocks.mean(axis=(1, 3)), crf)


@dataclass
class DegradeConfig:
    resolution_factors: list = field(default_factory=lambda: [Fraction(1)])
    noise: NoiseParams | None = field(default_factory=NoiseParams)
    crf: str = "srgb"

    def __post_init__(self):
        self.resolution_factors = [parse_factor(f) for f in self.resolution_factors]
        if not self.resolution_factors:
            raise ValueError("at least one resolution factor is required")


def degrade_at(pair: BlurPair, factor, noise: NoiseParams | None, crf: str = "srgb") -> BlurPair:
    """Downscale every image by ``factor``, then add noise to the blurry ones only.

    Blurry image ``k`` uses the noise stream ``derive_seed(noise.seed, k)``.
    """
    factor = parse_factor(factor)
    sharp = downscale(pair.sharp, factor, crf)
    blurry = [downscale(b, factor, crf) for b in pair.blurry]
    alphas = [None if a is None else _downscale_plain(a, factor) for a in pair.object_alpha]
    if noise is not None:
        blurry = [add_noise(b, dataclasses.replace(noise, seed=derive_seed(noise.seed, k)), crf)
                  for k, b in enumerate(blurry)]
    return dataclasses.replace(pair, sharp=sharp, blurry=blurry, object_alpha=alphas,
                               scale_factor=factor, noise_params=noise)


def _downscale_plain(a: np.ndarray, factor: Fraction) -> np.ndarray:
    d = factor.denominator
    a = center_crop(a, d)
    h, w = a.shape
    return a.reshape(h // d, d, w // d, d).mean(axis=(1, 3))


def degrade(pair: BlurPair, config: DegradeConfig, rng: np.random.Generator) -> BlurPair:
    """Pick one of ``config.resolution_factors`` at random, downscale, then add noise."""
    factors = config.resolution_factors
    factor = factors[int(rng.integers(len(factors)))] if len(factors) > 1 else factors[0]
    if factor == 1 and config.noise is None:
        return pair
    return degrade_at(pair, factor, config.noise, config.crf)
