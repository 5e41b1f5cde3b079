import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazepick.core import BoundingBox
from gazepick.geometry import (
    CalibrationError,
    CameraRig,
    EmptyCloud,
    Intrinsics,
    OutOfBounds,
    Point3,
    RigidTransform,
    deproject,
    extract_object_cloud,
    in_box,
    load_calibration,
    load_depth,
    object_pose_world,
    project,
    round_trip_error,
    save_depth,
    transform,
    write_xyz,
)

K640 = Intrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


def rot_from_quat(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_transform(r, t_scale=0.1):
    return RigidTransform(rot_from_quat(r.normal(size=4)), r.normal(size=3) * t_scale)


def homogeneous(p, T):
    return (T.matrix @ np.append(p, 1.0))[:3]


# -- deprojection -------------------------------------------------------

def test_principal_point_ray():
    depth = np.zeros((480, 640), np.uint16)
    depth[240, 320] = 1000
    assert deproject(320, 240, depth, K640, 0.001) == Point3(0.0, 0.0, 1.0, "depth")


def test_zero_depth_is_none():
    assert deproject(10, 10, np.zeros((480, 640), np.uint16), K640, 0.001) is None


def test_hand_evaluated_deprojection():
    depth = np.zeros((480, 640), np.uint16)
    depth[240, 620] = 2000
    K = Intrinsics(600.0, 600.0, 320.0, 240.0, 1280, 480)
    wide = np.zeros((480, 1280), np.uint16)
    wide[240, 920] = 2000
    p = deproject(920, 240, wide, K, 0.001)
    assert (p.X, p.Y, p.Z) == pytest.approx((2.0, 0.0, 2.0))


def test_out_of_bounds_pixel():
    with pytest.raises(OutOfBounds):
        deproject(640, 0, np.ones((480, 640), np.uint16), K640, 0.001)


# -- transforms ---------------------------------------------------------

def test_identity_transform():
    p = Point3(0.3, -1.0, 2.0)
    assert transform(p, RigidTransform.identity()) == p


def test_quarter_turn_about_z():
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    q = transform(Point3(1.0, 0.0, 0.0), RigidTransform(R, np.zeros(3)))
    assert (q.X, q.Y, q.Z) == pytest.approx((0.0, 1.0, 0.0))


def test_transform_equals_homogeneous_oracle(rng):
    for _ in range(200):
        T = random_transform(rng, 1.0)
        p = rng.normal(size=3) * 3
        q = transform(Point3(*p), T)
        assert np.abs(q.as_array() - homogeneous(p, T)).max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_transforms_preserve_distances(seed):
    r = np.random.default_rng(seed)
    T = random_transform(r, 5.0)
    a, b = r.normal(size=3) * 10, r.normal(size=3) * 10
    ta, tb = transform(Point3(*a), T).as_array(), transform(Point3(*b), T).as_array()
    assert abs(np.linalg.norm(ta - tb) - np.linalg.norm(a - b)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-7, 1e-2), st.integers(0, 8))
def test_non_orthonormal_rotation_rejected(seed, eps, entry):
    r = np.random.default_rng(seed)
    R = rot_from_quat(r.normal(size=4))
    R[entry // 3, entry % 3] += eps
    with pytest.raises(CalibrationError):
        RigidTransform(R, np.zeros(3))


def test_reflection_rejected():
    with pytest.raises(CalibrationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_inverse_and_compose(rng):
    T = random_transform(rng)
    p = rng.normal(size=3)
    assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)
    U = random_transform(rng)
    assert np.allclose(T.compose(U).apply(p), T.apply(U.apply(p)), atol=1e-12)


# -- projection ---------------------------------------------------------

def test_optical_axis_projects_to_principal_point():
    assert project(Point3(0.0, 0.0, 1.0), K640) == (320.0, 240.0)


@pytest.mark.parametrize("z", [0.0, -0.5])
def test_behind_camera_is_none(z):
    assert project(Point3(0.1, 0.1, z), K640) is None


def test_round_trip_random_pixels(rng):
    depth = rng.integers(1, 65535, (480, 640), dtype=np.uint16)
    worst = 0.0
    for _ in range(1000):
        u, v = int(rng.integers(0, 640)), int(rng.integers(0, 480))
        uc, vc = project(deproject(u, v, depth, K640, 0.001), K640)
        worst = max(worst, abs(uc - u), abs(vc - v))
    assert worst < 1e-6


# -- box inclusion ------------------------------------------------------

def test_in_box_is_inclusive():
    b = BoundingBox(10, 20, 30, 40)
    assert in_box(25, 40, b)
    assert in_box(10, 20, b) and in_box(40, 60, b) and in_box(40, 35, b)
    assert not in_box(41, 35, b) and not in_box(9, 35, b) and not in_box(25, 61, b)


# -- point clouds -------------------------------------------------------

def cloud_oracle(depth, rig, box):
    pts, index = [], []
    h, w = depth.shape
    for v in range(h):
        for u in range(w):
            p = deproject(u, v, depth, rig.depth, rig.depth_scale)
            if p is None:
                continue
            pc = transform(p, rig.depth_to_color, "color")
            uv = project(pc, rig.color)
            if uv is not None and in_box(uv[0], uv[1], box):
                pts.append(pc.as_array())
                index.append(v * w + u)
    return np.array(pts).reshape(-1, 3), np.array(index, dtype=np.int64)


def test_flat_plane_left_half():
    K = Intrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
    rig = CameraRig(K, K, RigidTransform.identity(), 0.001)
    depth = np.full((48, 64), 1500, np.uint16)
    # pixel columns 0..31 project to u in [0, 31]
    cloud = extract_object_cloud(depth, rig, BoundingBox(0, 0, 31.5, 48))
    assert len(cloud) == 32 * 48
    exp, _ = cloud_oracle(depth, rig, BoundingBox(0, 0, 31.5, 48))
    assert np.abs(cloud - exp).max() < 1e-12
    assert np.allclose(cloud[:, 2], 1.5)


def test_single_pixel_box():
    K = Intrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
    rig = CameraRig(K, K, RigidTransform.identity(), 0.001)
    depth = np.full((48, 64), 900, np.uint16)
    cloud = extract_object_cloud(depth, rig, BoundingBox(10.5, 7.5, 1.0, 1.0))
    assert len(cloud) == 1
    u, v = project(Point3(*cloud[0]), K)
    assert (u, v) == pytest.approx((11.0, 8.0))


def test_zero_depth_gives_empty_cloud():
    K = Intrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
    rig = CameraRig(K, K, RigidTransform.identity(), 0.001)
    assert len(extract_object_cloud(np.zeros((48, 64), np.uint16), rig, BoundingBox(0, 0, 64, 48))) == 0


def random_rig(r):
    dw, dh = 48, 36
    Kd = Intrinsics(*r.uniform(40, 70, 2), *(r.uniform(0.4, 0.6, 2) * [dw, dh]), dw, dh)
    cw, ch = 64, 48
    Kc = Intrinsics(*r.uniform(50, 90, 2), *(r.uniform(0.4, 0.6, 2) * [cw, ch]), cw, ch)
    R = rot_from_quat(np.array([1.0, *r.normal(0, 0.03, 3)]))
    return CameraRig(Kd, Kc, RigidTransform(R, r.normal(0, 0.02, 3)), float(r.choice([0.001, 0.0005])))


def test_cloud_equals_nested_loop_oracle_on_random_rigs(rng):
    for _ in range(5):
        rig = random_rig(rng)
        depth = rng.integers(300, 3000, (36, 48)).astype(np.uint16)
        depth[rng.random(depth.shape) < 0.2] = 0
        x, y = rng.uniform(0, 40), rng.uniform(0, 30)
        box = BoundingBox(x, y, rng.uniform(4, 64 - x), rng.uniform(4, 48 - y))
        cloud, index = extract_object_cloud(depth, rig, box, return_index=True)
        exp_cloud, exp_index = cloud_oracle(depth, rig, box)
        assert len(exp_index) > 0
        # same inclusion set in the same order; coordinates up to summation order
        assert np.array_equal(index, exp_index)
        assert np.abs(cloud - exp_cloud).max() < 1e-12


# -- object pose --------------------------------------------------------

def test_pose_of_single_point_identity():
    p = object_pose_world([[0.1, 0.2, 0.3]], RigidTransform.identity())
    assert (p.X, p.Y, p.Z, p.frame) == (0.1, 0.2, 0.3, "world")


def test_pose_translation_only(rng):
    cloud = rng.normal(size=(50, 3))
    t = np.array([1.0, -2.0, 0.5])
    p = object_pose_world(cloud, RigidTransform(np.eye(3), t))
    assert np.allclose(p.as_array(), cloud.mean(0) + t, atol=1e-12)


def test_pose_equals_oracle(rng):
    for _ in range(50):
        cloud = rng.normal(size=(int(rng.integers(1, 200)), 3))
        T = random_transform(rng, 2.0)
        p = object_pose_world(cloud, T)
        assert np.abs(p.as_array() - homogeneous(cloud.mean(0), T)).max() < 1e-12


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloud):
        object_pose_world(np.zeros((0, 3)), RigidTransform.identity())


# -- files --------------------------------------------------------------

def test_calibration_round_trip_and_errors(tmp_path, rng):
    rig = CameraRig(K640, K640, random_transform(rng), 0.001)
    p = tmp_path / "calib.json"
    p.write_text(json.dumps(rig.to_dict()))
    back = load_calibration(p)
    assert back.depth == rig.depth and np.array_equal(back.depth_to_color.R, rig.depth_to_color.R)
    bad = rig.to_dict()
    bad["depth_scale"] = 0
    p.write_text(json.dumps(bad))
    with pytest.raises(CalibrationError):
        load_calibration(p)
    p.write_text("{not json")
    with pytest.raises(CalibrationError):
        load_calibration(p)
    bad = rig.to_dict()
    bad["depth_to_color"]["R"] = [1, 0, 0]
    p.write_text(json.dumps(bad))
    with pytest.raises(CalibrationError):
        load_calibration(p)


def test_depth_png_is_exact(tmp_path, rng):
    d = rng.integers(0, 65535, (20, 30), dtype=np.uint16)
    save_depth(tmp_path / "d.png", d)
    assert np.array_equal(load_depth(tmp_path / "d.png"), d)


def test_xyz_export(tmp_path):
    write_xyz([[0.1, 0.25, 1.0], [1 / 3, 0.0, 2.0]], tmp_path / "c.xyz")
    assert (tmp_path / "c.xyz").read_text() == "0.100000 0.250000 1.000000\n0.333333 0.000000 2.000000\n"


def test_round_trip_error_identity_rig():
    assert round_trip_error(CameraRig(K640, K640, RigidTransform.identity(), 0.001)) < 1e-6
