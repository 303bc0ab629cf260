import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from plyfile import PlyData, PlyElement
from scipy.special import sph_harm_y

from blurforge.scene import (
    SH_C0,
    CameraIntrinsics,
    CameraPose,
    GaussianScene,
    SceneDataError,
    SceneFormatError,
    eval_sh,
    load_scene,
    make_synthetic_scene,
    save_scene,
    sh_basis,
)


def _write_ply(path, fields: dict):
    n = len(next(iter(fields.values())))
    data = np.empty(n, dtype=[(k, "<f4") for k in fields])
    for k, v in fields.items():
        data[k] = v
    PlyData([PlyElement.describe(data, "vertex")], byte_order="<").write(str(path))


def _single_vertex(**overrides):
    fields = {"x": [0.0], "y": [0.0], "z": [1.0], "f_dc_0": [0.1], "f_dc_1": [0.2],
              "f_dc_2": [0.3], "opacity": [0.0], "scale_0": [0.0], "scale_1": [0.0],
              "scale_2": [0.0], "rot_0": [1.0], "rot_1": [0.0], "rot_2": [0.0], "rot_3": [0.0]}
    fields.update(overrides)
    return fields


def test_load_single_vertex_activations(tmp_path):
    p = tmp_path / "one.ply"
    _write_ply(p, _single_vertex())
    scene = load_scene(p)
    assert len(scene) == 1
    np.testing.assert_array_equal(scene.scales[0], [1.0, 1.0, 1.0])
    assert scene.opacities[0] == 0.5
    np.testing.assert_allclose(scene.sh[0, 0], [0.1, 0.2, 0.3], rtol=1e-6)
    assert not scene.sh[0, 1:].any()


def test_load_missing_opacity_names_property(tmp_path):
    fields = _single_vertex()
    del fields["opacity"]
    p = tmp_path / "bad.ply"
    _write_ply(p, fields)
    with pytest.raises(SceneFormatError, match="'opacity'"):
        load_scene(p)


def test_load_reports_first_missing_property(tmp_path):
    fields = _single_vertex()
    del fields["scale_1"], fields["rot_3"]
    p = tmp_path / "bad.ply"
    _write_ply(p, fields)
    with pytest.raises(SceneFormatError, match="'scale_1'"):
        load_scene(p)


def test_load_non_finite_names_primitive(tmp_path):
    fields = {k: v * 3 for k, v in _single_vertex().items()}
    fields["y"] = [0.0, float("nan"), 0.0]
    p = tmp_path / "nan.ply"
    _write_ply(p, fields)
    with pytest.raises(SceneDataError, match="primitive 1"):
        load_scene(p)


def test_load_normalizes_quaternions(tmp_path):
    p = tmp_path / "q.ply"
    _write_ply(p, _single_vertex(rot_0=[2.0], rot_1=[0.0], rot_2=[2.0], rot_3=[0.0]))
    q = load_scene(p).rotations[0]
    assert abs(np.linalg.norm(q) - 1.0) <= 1e-6
    np.testing.assert_allclose(q, [2 ** -0.5, 0, 2 ** -0.5, 0])


def test_load_pads_degree_one_sh(tmp_path):
    fields = _single_vertex()
    rest = np.arange(9, dtype=float) / 10  # 3 coefficients per channel, channel-major
    for i in range(9):
        fields[f"f_rest_{i}"] = [rest[i]]
    p = tmp_path / "deg1.ply"
    _write_ply(p, fields)
    sh = load_scene(p).sh[0]
    np.testing.assert_allclose(sh[1:4, 0], rest[0:3], rtol=1e-6)
    np.testing.assert_allclose(sh[1:4, 2], rest[6:9], rtol=1e-6)
    assert not sh[4:].any()


def test_save_load_round_trip_is_byte_identical(tmp_path):
    scene = make_synthetic_scene(3, 100, 1.0, view_dependence=0.2)
    first, second = tmp_path / "a.ply", tmp_path / "b.ply"
    save_scene(scene, first)
    loaded = load_scene(first)
    save_scene(loaded, second)
    assert first.read_bytes() == second.read_bytes()
    again = load_scene(second)
    for name in ("positions", "scales", "rotations", "opacities", "sh"):
        np.testing.assert_array_equal(getattr(again, name), getattr(loaded, name))


def test_synthetic_scene_is_deterministic():
    a = make_synthetic_scene(11, 50, 2.0)
    b = make_synthetic_scene(11, 50, 2.0)
    for name in ("positions", "scales", "rotations", "opacities", "sh"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_synthetic_scene_single_primitive():
    s = make_synthetic_scene(0, 1, 0.5)
    assert len(s) == 1
    assert (np.abs(s.positions) <= 0.5).all()


def test_synthetic_scene_ranges():
    extent = 1.5
    s = make_synthetic_scene(7, 500, extent)
    lo, hi = s.bounding_box
    assert (lo >= -extent).all() and (hi <= extent).all()
    assert (s.scales >= extent / 200).all() and (s.scales <= extent / 20).all()
    assert (s.opacities >= 0.2).all() and (s.opacities <= 1.0).all()
    assert not s.sh[:, 1:].any()
    colors = eval_sh(np.tile([0.0, 0.0, 1.0], (500, 1)), s.sh)
    assert (colors >= 0).all() and (colors <= 1).all()


def test_synthetic_scene_preconditions():
    with pytest.raises(ValueError):
        make_synthetic_scene(0, 0, 1.0)
    with pytest.raises(ValueError):
        make_synthetic_scene(0, 5, 0.0)


def test_scene_is_read_only():
    s = make_synthetic_scene(0, 4, 1.0)
    with pytest.raises(ValueError):
        s.positions[0, 0] = 5.0


def test_empty_scene_rejected():
    with pytest.raises(SceneDataError):
        GaussianScene(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                      np.zeros((0, 16, 3)))


def test_eval_sh_zero_coefficients():
    np.testing.assert_array_equal(eval_sh([0.0, 0.0, 1.0], np.zeros((16, 3))), [0.5, 0.5, 0.5])


def test_eval_sh_dc_only():
    sh = np.zeros((16, 3))
    sh[0] = [0.4, -0.2, 1.0]
    np.testing.assert_allclose(eval_sh([1.0, 0.0, 0.0], sh), 0.28209479 * sh[0] + 0.5, atol=1e-8)


def test_eval_sh_degree_one_z_flip():
    sh = np.zeros((16, 3))
    sh[2] = [0.3, 0.1, 0.2]
    up = eval_sh([0.0, 0.0, 1.0], sh)
    down = eval_sh([0.0, 0.0, -1.0], sh)
    y10 = np.sqrt(3.0 / (4.0 * np.pi))
    np.testing.assert_allclose(up - down, 2 * y10 * sh[2], atol=1e-12)


def test_sh_basis_matches_real_harmonics(rng):
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    theta, phi = np.arccos(d[:, 2]), np.arctan2(d[:, 1], d[:, 0])
    basis = sh_basis(d)
    col = 0
    for l in range(4):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            if m < 0:
                real = np.sqrt(2) * (-1) ** m * y.imag
            elif m == 0:
                real = y.real
            else:
                real = np.sqrt(2) * (-1) ** m * y.real
            # 3DGS basis carries an extra (-1)^m relative to the textbook real basis.
            np.testing.assert_allclose(basis[:, col], (-1) ** m * real, atol=1e-12)
            col += 1


def test_eval_sh_linear_before_clamp(rng):
    d = np.array([0.2, -0.3, 0.9])
    d /= np.linalg.norm(d)
    a = 0.01 * rng.normal(size=(16, 3))
    b = 0.01 * rng.normal(size=(16, 3))
    # Small coefficients keep everything above the clamp.
    np.testing.assert_allclose(eval_sh(d, a + b) - 0.5,
                               (eval_sh(d, a) - 0.5) + (eval_sh(d, b) - 0.5), atol=1e-12)
    np.testing.assert_allclose(eval_sh(d, 3 * a) - 0.5, 3 * (eval_sh(d, a) - 0.5), atol=1e-12)


def test_eval_sh_dc_only_direction_independent(rng):
    sh = np.zeros((16, 3))
    sh[0] = rng.normal(size=3)
    d = rng.normal(size=(100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out = eval_sh(d, np.broadcast_to(sh, (100, 16, 3)))
    assert np.max(np.abs(out - out[0])) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_eval_sh_nonnegative(coeffs):
    sh = np.zeros((16, 3))
    sh[0] = coeffs
    assert (eval_sh([0.0, 1.0, 0.0], sh) >= 0).all()


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 10.0, 5.0, 5.0, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(10.0, 10.0, 10.0, 5.0, 10, 10)


def test_pose_look_at_conventions():
    pose = CameraPose.look_at([0.0, 0.0, -5.0], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(pose.center, [0, 0, -5], atol=1e-12)
    # Target ends up on the +z axis of the camera.
    np.testing.assert_allclose(pose.matrix @ np.zeros(3) + pose.translation, [0, 0, 5], atol=1e-12)
    # World +y (up=-y default) appears downwards in the image.
    below = pose.matrix @ np.array([0.0, 1.0, 0.0]) + pose.translation
    assert below[1] > 0


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        CameraPose(np.array([2.0, 0, 0, 0]), np.zeros(3))
