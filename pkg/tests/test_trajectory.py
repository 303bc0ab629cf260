import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from blurforge.scene import CameraPose
from blurforge.trajectory import (
    CurveParams,
    build_trajectory,
    de_casteljau,
    middle_pose,
    sample_curve_params,
    trajectory_from_dict,
)

ANCHOR = CameraPose.look_at([1.0, -0.5, 3.0], [0.0, 0.0, 0.0])


def _bernstein(control, taus):
    n = len(control) - 1
    basis = np.stack([comb(n, i) * taus ** i * (1 - taus) ** (n - i) for i in range(n + 1)], axis=1)
    return basis @ control


def test_sample_params_deterministic():
    a = sample_curve_params(np.random.default_rng(0))
    b = sample_curve_params(np.random.default_rng(0))
    assert a.order == b.order
    np.testing.assert_array_equal(a.delta_t, b.delta_t)
    np.testing.assert_array_equal(a.delta_r, b.delta_r)


def test_sample_params_bounds_and_order_frequencies():
    rng = np.random.default_rng(42)
    draws = [sample_curve_params(rng) for _ in range(10_000)]
    lengths = np.array([np.linalg.norm(p.delta_t) for p in draws])
    assert lengths.max() <= 0.7 and lengths.min() >= 0.0
    assert max(np.abs(p.delta_r).max() for p in draws) <= 1.5
    counts = np.bincount([p.order for p in draws], minlength=6)[1:]
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert (np.abs(counts - 2000) <= 3 * sigma).all()


def test_de_casteljau_matches_bernstein(rng):
    control = rng.normal(size=(6, 6))
    taus = np.linspace(0, 1, 33)
    np.testing.assert_allclose(de_casteljau(control, taus), _bernstein(control, taus), atol=1e-12)


def test_zero_extent_trajectory_is_static():
    params = CurveParams(3, np.zeros(3), np.zeros(3))
    traj = build_trajectory(5, params, ANCHOR, 121)
    assert all(p is ANCHOR for p in traj.poses)
    assert middle_pose(traj) is ANCHOR


def test_linear_trajectory_is_uniform_subdivision():
    dt = np.array([0.3, -0.2, 0.1])
    traj = build_trajectory(1, CurveParams(1, dt, np.zeros(3)), ANCHOR, 11)
    expected = (np.arange(11) / 10 - 0.5)[:, None] * dt
    np.testing.assert_allclose(traj.offsets[:, :3], expected, atol=1e-15)
    centers = np.array([p.center for p in traj.poses])
    steps = np.diff(centers, axis=0)
    np.testing.assert_allclose(np.linalg.norm(steps, axis=1), np.linalg.norm(dt) / 10, rtol=1e-9)
    np.testing.assert_allclose(centers[-1] - centers[0],
                               ANCHOR.matrix.T @ dt, atol=1e-12)


def test_middle_pose_of_121():
    params = sample_curve_params(np.random.default_rng(3))
    traj = build_trajectory(9, params, ANCHOR, 121)
    assert middle_pose(traj) is traj.poses[60]
    assert traj.poses[60].allclose(ANCHOR, atol=1e-9)


def test_single_subframe():
    params = sample_curve_params(np.random.default_rng(4))
    traj = build_trajectory(2, params, ANCHOR, 1)
    assert traj.M == 1 and middle_pose(traj) is traj.poses[0]
    assert traj.poses[0].allclose(ANCHOR)


def test_even_m_rejected():
    with pytest.raises(ValueError):
        build_trajectory(0, CurveParams(2, np.zeros(3), np.zeros(3)), ANCHOR, 120)


def test_params_bounds_enforced():
    with pytest.raises(ValueError):
        CurveParams(6, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        CurveParams(2, [0.8, 0, 0], np.zeros(3))
    with pytest.raises(ValueError):
        CurveParams(2, np.zeros(3), [0, 1.6, 0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32), m=st.sampled_from([1, 3, 21, 121]))
def test_curve_properties(seed, m):
    rng = np.random.default_rng(seed)
    params = sample_curve_params(rng)
    traj = build_trajectory(seed, params, ANCHOR, m)
    cp = traj.control_points
    assert len(cp) == params.order + 1
    assert traj.poses[(m - 1) // 2].allclose(ANCHOR, atol=1e-9)
    assert not traj.offsets[(m - 1) // 2].any()
    if m > 1:
        np.testing.assert_allclose(traj.offsets[0], cp[0], atol=1e-12, rtol=0)
        np.testing.assert_allclose(traj.offsets[-1], cp[-1], atol=1e-12, rtol=0)
    assert (traj.offsets >= cp.min(axis=0) - 1e-12).all()
    assert (traj.offsets <= cp.max(axis=0) + 1e-12).all()


def test_interior_perturbation_bounded():
    rng = np.random.default_rng(7)
    for _ in range(200):
        params = sample_curve_params(rng)
        traj = build_trajectory(int(rng.integers(2 ** 31)), params, ANCHOR, 21)
        n = params.order
        line = (np.arange(n + 1) / n)[:, None] * np.concatenate([params.delta_t, params.delta_r])
        rel = traj.control_points - traj.control_points[0] - line
        assert (np.abs(rel[:, :3]) <= 0.25 * np.linalg.norm(params.delta_t) + 1e-12).all()
        assert (np.abs(rel[:, 3:]) <= 0.25 * np.linalg.norm(params.delta_r) + 1e-12).all()


@pytest.mark.parametrize("factor", [2.0, 0.37])
def test_translation_linear_in_delta_t(factor):
    params = CurveParams(4, [0.1, -0.2, 0.05], [0.5, -1.0, 0.2])
    scaled = CurveParams(4, factor * params.delta_t, params.delta_r)
    a = build_trajectory(17, params, ANCHOR, 31)
    b = build_trajectory(17, scaled, ANCHOR, 31)
    if factor == 2.0:
        np.testing.assert_array_equal(b.offsets[:, :3], factor * a.offsets[:, :3])
    else:
        np.testing.assert_allclose(b.offsets[:, :3], factor * a.offsets[:, :3], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(b.offsets[:, 3:], a.offsets[:, 3:])


def test_trajectory_reproducible_and_json_round_trip():
    params = sample_curve_params(np.random.default_rng(8))
    a = build_trajectory(123, params, ANCHOR, 21, translation_scale=0.5)
    b = build_trajectory(123, params, ANCHOR, 21, translation_scale=0.5)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    restored = trajectory_from_dict(json.loads(json.dumps(a.to_dict())))
    np.testing.assert_array_equal(restored.offsets, a.offsets)
    for p, q in zip(a.poses, restored.poses):
        assert p.allclose(q, atol=1e-12)


def test_rotation_offset_applied_about_camera_axes():
    params = CurveParams(1, np.zeros(3), [0.0, 1.0, 0.0])
    traj = build_trajectory(0, params, CameraPose.identity(), 3)
    # Camera center stays fixed under pure rotation.
    for p in traj.poses:
        np.testing.assert_allclose(p.center, 0.0, atol=1e-12)
    R_end = traj.poses[-1].matrix
    angle = np.degrees(np.arccos((np.trace(R_end) - 1) / 2))
    assert angle == pytest.approx(0.5, abs=1e-9)
