from fractions import Fraction

import numpy as np
import pytest

from blurforge.blur import BlurPair, crf_forward, crf_inverse
from blurforge.degrade import (
    DegradeConfig,
    NoiseParams,
    add_noise,
    degrade,
    degrade_at,
    downscale,
    parse_factor,
)


def _gray(level, shape=(1000, 1000, 1)):
    return np.full(shape, float(crf_forward(level)))


def _pair(rng, h=24, w=24, n=2):
    return BlurPair(rng.uniform(size=(h, w, 3)), [rng.uniform(size=(h, w, 3)) for _ in range(n)],
                    [None] * n)


def test_zero_noise_is_identity(rng):
    img = rng.uniform(size=(5, 5, 3))
    np.testing.assert_array_equal(add_noise(img, NoiseParams(0.0, 0.0)), img)


def test_noise_variance_matches_model():
    p = NoiseParams(shot_gain=2e-3, read_sigma=0.01, seed=3)
    x = 0.3
    img = _gray(x)
    diff = crf_inverse(add_noise(img, p)) - crf_inverse(img)
    expected = p.shot_gain * x + p.read_sigma ** 2
    assert abs(diff.var() / expected - 1) <= 0.05
    assert abs(diff.mean()) < 1e-4


def test_noise_variance_affine_in_signal():
    p = NoiseParams(shot_gain=4e-3, read_sigma=0.02)
    levels = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    variances = []
    for i, x in enumerate(levels):
        img = _gray(x, (200_000, 1, 1))
        noisy = add_noise(img, NoiseParams(p.shot_gain, p.read_sigma, seed=i))
        variances.append((crf_inverse(noisy) - crf_inverse(img)).var())
    slope, _ = np.polyfit(levels, variances, 1)
    assert abs(slope / p.shot_gain - 1) <= 0.10


def test_poisson_option_variance():
    p = NoiseParams(shot_gain=1e-3, read_sigma=0.0, seed=1, poisson=True)
    x = 0.4
    img = _gray(x, (500, 1000, 1))
    diff = crf_inverse(add_noise(img, p)) - crf_inverse(img)
    assert abs(diff.var() / (p.shot_gain * x) - 1) <= 0.05


def test_noise_reproducible(rng):
    img = rng.uniform(size=(16, 16, 3))
    p = NoiseParams(seed=99)
    assert add_noise(img, p).tobytes() == add_noise(img, p).tobytes()
    assert add_noise(img, p).tobytes() != add_noise(img, NoiseParams(seed=100)).tobytes()


def test_noise_output_in_range(rng):
    img = rng.uniform(size=(32, 32, 3))
    out = add_noise(img, NoiseParams(0.05, 0.1, seed=2))
    assert out.min() >= 0 and out.max() <= 1


def test_downscale_constant():
    out = downscale(np.full((12, 12, 3), 0.37), Fraction(1, 4))
    assert out.shape == (3, 3, 3)
    np.testing.assert_allclose(out, 0.37, atol=1e-6)


def test_downscale_checkerboard():
    img = np.zeros((2, 2, 3))
    img[0, 0] = img[1, 1] = 1.0
    np.testing.assert_allclose(downscale(img, "1/2"), np.full((1, 1, 3), crf_forward(0.5)), atol=1e-12)


def test_downscale_shapes_and_crop():
    assert downscale(np.zeros((6, 6, 3)), Fraction(1, 3)).shape == (2, 2, 3)
    assert downscale(np.zeros((7, 9, 3)), 0.5).shape == (3, 4, 3)
    img = np.zeros((7, 7, 3))
    img[-1] = 1.0  # odd remainder is trimmed from the bottom edge
    assert not downscale(img, Fraction(1, 2)).any()


def test_downscale_commutes_with_linear_offset(rng):
    img = rng.uniform(0.1, 0.6, size=(12, 12, 3))
    c = 0.05
    lhs = downscale(crf_forward(crf_inverse(img) + c), Fraction(1, 3))
    rhs = crf_forward(crf_inverse(downscale(img, Fraction(1, 3))) + c)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6


def test_parse_factor():
    assert parse_factor("1/3") == Fraction(1, 3)
    assert parse_factor(0.25) == Fraction(1, 4)
    assert parse_factor(1) == 1
    with pytest.raises(ValueError):
        parse_factor("1/5")


def test_degrade_disabled_returns_pair(rng):
    pair = _pair(rng)
    cfg = DegradeConfig(resolution_factors=[1], noise=None)
    assert degrade(pair, cfg, np.random.default_rng(0)) is pair


def test_degrade_factor_recorded(rng):
    pair = _pair(rng)
    cfg = DegradeConfig(resolution_factors=["1/2", "1/3", "1/4"], noise=NoiseParams())
    seen = set()
    for s in range(30):
        out = degrade(pair, cfg, np.random.default_rng(s))
        f = out.scale_factor
        seen.add(f)
        assert out.sharp.shape == (24 * f, 24 * f, 3)
        assert all(b.shape == out.sharp.shape for b in out.blurry)
    assert seen == {Fraction(1, 2), Fraction(1, 3), Fraction(1, 4)}


def test_degrade_keeps_sharp_noise_free(rng):
    pair = _pair(rng)
    out = degrade_at(pair, "1/2", NoiseParams(1e-2, 0.05, seed=4))
    np.testing.assert_array_equal(out.sharp, downscale(pair.sharp, "1/2"))
    assert not np.array_equal(out.blurry[0], downscale(pair.blurry[0], "1/2"))
    # Independent streams per blurry image.
    diff0 = out.blurry[0] - downscale(pair.blurry[0], "1/2")
    diff1 = out.blurry[1] - downscale(pair.blurry[1], "1/2")
    assert not np.array_equal(diff0, diff1)


def test_noise_is_applied_after_downscale():
    p = NoiseParams(shot_gain=0.0, read_sigma=0.02, seed=6)
    x = 0.3
    img = _gray(x, (1000, 1000, 3))
    pair = BlurPair(img, [img], [None])
    out = degrade_at(pair, "1/2", p)
    var_after = (crf_inverse(out.blurry[0]) - x).var()
    before = downscale(add_noise(img, p), "1/2")
    var_before = (crf_inverse(before) - x).var()
    model = p.read_sigma ** 2
    assert abs(var_after / model - 1) <= 0.05
    assert abs(var_before / (model / 4) - 1) <= 0.05
    assert var_after / var_before == pytest.approx(4.0, rel=0.1)
