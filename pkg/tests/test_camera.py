import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoscene.camera import (
    IsometricCamera,
    ground_rectify_map,
    height_pixels_per_unit,
    point_depth,
    project,
    unproject,
    unproject_depth,
)
from oracles import project_ref

finite = st.floats(-1e3, 1e3, allow_nan=False)
scales = st.floats(0.01, 100.0)


def cam(scale=1.0, principal=(0.0, 0.0)):
    return IsometricCamera(scale, 512, 512, principal)


def test_axes_equal_length_and_120_degrees():
    c = cam()
    axes = project(np.eye(3), c) - project(np.zeros(3), c)
    lengths = np.linalg.norm(axes, axis=1)
    assert np.allclose(lengths, np.sqrt(2.0 / 3.0), atol=1e-12)
    for i, j in [(0, 1), (1, 2), (0, 2)]:
        cosang = axes[i] @ axes[j] / (lengths[i] * lengths[j])
        assert abs(np.degrees(np.arccos(cosang)) - 120.0) < 1e-9


def test_projection_matches_basis_oracle(rng):
    c = cam(7.3, (11.0, -4.0))
    pts = rng.uniform(-50, 50, size=(200, 3))
    ref = np.array([project_ref(p, 7.3, (11.0, -4.0)) for p in pts])
    assert np.allclose(project(pts, c), ref, atol=1e-9)


def test_origin_maps_to_principal_point():
    assert np.allclose(project([0, 0, 0], cam(3.0, (256, 256))), [256, 256])


def test_ground_diagonal_projects_vertically():
    s = 5.0
    d = project([1, 1, 0], cam(s)) - project([0, 0, 0], cam(s))
    assert abs(d[0]) < 1e-12
    assert d[1] == pytest.approx(s * 2 / np.sqrt(6), abs=1e-12)


def test_height_pixels_per_unit():
    assert height_pixels_per_unit(cam(1.0)) == pytest.approx(0.816496580927726, abs=1e-12)
    assert height_pixels_per_unit(cam(10.0)) == pytest.approx(8.16496580927726, abs=1e-9)


def test_rectify_ground_point():
    c = cam(4.0, (100, 50))
    r = ground_rectify_map(c)
    assert np.allclose(r.rectify(project([3, 7, 0], c)), [3, 7], atol=1e-9)


def test_rectify_unrectify_identity(rng):
    r = ground_rectify_map(cam(6.5, (200, 300)))
    g = rng.uniform(-100, 100, size=(1000, 2))
    assert np.abs(r.rectify(r.unrectify(g)) - g).max() <= 1e-9
    px = rng.uniform(0, 512, size=(1000, 2))
    assert np.abs(r.unrectify(r.rectify(px)) - px).max() <= 1e-9


def test_unit_square_rectifies_to_unit_square():
    c = cam(9.0, (10, 20))
    r = ground_rectify_map(c)
    sq = np.array([[2, 3, 0], [3, 3, 0], [3, 4, 0], [2, 4, 0]], dtype=float)
    g = r.rectify(project(sq, c))
    assert np.allclose(g, sq[:, :2], atol=1e-9)
    x, y = g[:, 0], g[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert area == pytest.approx(1.0, abs=1e-9)


def test_elevated_point_rectifies_with_diagonal_shift():
    c = cam(3.0)
    r = ground_rectify_map(c)
    assert np.allclose(r.rectify(project([5, 2, 1.5], c)), [3.5, 0.5], atol=1e-9)


def test_unproject_inverts_project_and_depth(rng):
    c = cam(2.0, (30, 40))
    p = rng.uniform(-20, 20, size=(100, 3))
    back = unproject(project(p, c), point_depth(p, c), c)
    assert np.allclose(back, p, atol=1e-9)


def test_unproject_flat_ground_depth():
    c = cam(4.0, (64, 16))
    H, W = 32, 32
    rows, cols = np.mgrid[0:H, 0:W]
    px = np.stack([cols + 0.5, rows + 0.5], -1).reshape(-1, 2)
    # depth of the ground point under each pixel: ray meets Z = 0
    ground = ground_rectify_map(c).rectify(px)
    d = point_depth(np.column_stack([ground, np.zeros(len(ground))]), c).reshape(H, W)
    pts = unproject_depth(d, np.ones((H, W), bool), c)
    assert np.abs(pts.points[:, 2]).max() <= 1e-6


def test_unproject_single_and_empty():
    c = cam()
    valid = np.zeros((4, 4), bool)
    assert len(unproject_depth(np.zeros((4, 4)), valid, c)) == 0
    valid[1, 2] = True
    ps = unproject_depth(np.full((4, 4), 5.0), valid, c, semantic=np.full((4, 4), 3))
    assert len(ps) == 1
    assert ps.attributes["semantic"].tolist() == [3]


def test_camera_validation():
    with pytest.raises(ValueError):
        IsometricCamera(0.0, 10, 10)
    with pytest.raises(ValueError):
        IsometricCamera(1.0, 0, 10)


def test_camera_roundtrip_dict():
    c = IsometricCamera(2.5, 100, 80, (3.0, 4.0), 17.0)
    assert IsometricCamera.from_dict(c.to_dict()) == c


@given(scales)
def test_axis_property_any_scale(s):
    c = cam(s)
    axes = project(np.eye(3), c) - project(np.zeros(3), c)
    lengths = np.linalg.norm(axes, axis=1)
    assert np.allclose(lengths, s * np.sqrt(2.0 / 3.0), rtol=1e-12)
    cos = [axes[i] @ axes[j] / (lengths[i] * lengths[j]) for i, j in [(0, 1), (1, 2), (0, 2)]]
    assert np.allclose(cos, -0.5, atol=1e-9)


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite), scales)
def test_projection_is_affine(a, b, s):
    c = cam(s, (12.0, -7.0))
    a, b = np.array(a), np.array(b)
    lhs = project(a + b, c) - project(a, c) - project(b, c) + project(np.zeros(3), c)
    assert np.abs(lhs).max() <= 1e-9 * max(1.0, s * (np.abs(a).max() + np.abs(b).max()))


@settings(max_examples=50)
@given(st.tuples(finite, finite), scales)
def test_rectification_exact_on_ground(g, s):
    c = cam(s, (256.0, 256.0))
    back = ground_rectify_map(c).rectify(project([g[0], g[1], 0.0], c))
    assert np.allclose(back, g, atol=1e-9 * max(1.0, np.abs(g).max()))
