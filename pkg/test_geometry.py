"""Line representations, latitude/longitude chart and camera geometry"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from errors import BehindCameraError, DegenerateProjectionError, InvalidDirectionError, InvalidLineError
from geometry import (
    AnchoredLine,
    AxisDirection,
    CameraIntrinsics,
    FixedDirectionLine,
    PluckerLine,
    Pose,
    Segment2D,
    direction_from_latlong,
    interpretation_plane_normal,
    inverse_depth_from_plucker,
    latlong_from_direction,
    latlong_gradient,
    line_reprojection_error,
    ortho_from_plucker,
    plucker_distance,
    plucker_from_ortho,
    plucker_from_points,
    project_line,
    reconstruct_line,
    rotate_direction,
    tangent_basis,
    transform_line,
    wrap_angle,
)

UNIT_K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
K = CameraIntrinsics(500.0, 480.0, 320.0, 240.0)


def random_pose(rng) -> Pose:
    return Pose(Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(), rng.normal(size=3))


def random_line(rng) -> PluckerLine:
    return plucker_from_points(rng.normal(size=3) * 3, rng.normal(size=3) * 3)


def test_plucker_from_points_examples():
    line = plucker_from_points([0, 0, 0], [1, 0, 0])
    assert_allclose(line.n, [0, 0, 0])
    assert_allclose(line.v, [1, 0, 0])

    line = plucker_from_points([0, 1, 0], [1, 1, 0])
    assert_allclose(line.n, [0, 0, -1])
    assert_allclose(line.v, [1, 0, 0])

    with pytest.raises(InvalidLineError):
        plucker_from_points([1.5, -2, 3], [1.5, -2, 3])


def test_plucker_constraint_on_random_lines():
    rng = np.random.default_rng(1)
    for _ in range(200):
        line = random_line(rng)
        assert abs(line.n @ line.v) < 1e-9 * max(1.0, np.linalg.norm(line.n) * np.linalg.norm(line.v))


def test_latlong_examples():
    a = latlong_from_direction([0, 0, 1])
    assert a.phi == pytest.approx(0.0)
    assert a.theta == pytest.approx(math.pi)

    a = latlong_from_direction([1, 0, 0])
    assert a.phi == pytest.approx(math.pi / 2)
    assert a.theta == pytest.approx(3 * math.pi / 2)

    a = latlong_from_direction([0, 1, 0])
    assert a.phi == pytest.approx(math.pi / 2)
    assert a.theta == pytest.approx(math.pi)

    with pytest.raises(InvalidDirectionError):
        latlong_from_direction([0, 0, 0])


def test_direction_from_latlong_examples():
    assert_allclose(direction_from_latlong(AxisDirection(0.0, 1.234)), [0, 0, 1], atol=1e-15)
    assert_allclose(direction_from_latlong(AxisDirection(math.pi / 2, 3 * math.pi / 2)), [1, 0, 0], atol=1e-15)


def test_latlong_round_trip_random():
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for d in dirs:
        back = direction_from_latlong(latlong_from_direction(d))
        assert np.linalg.norm(back) == pytest.approx(1.0)
        assert np.linalg.norm(back - d) < 1e-9


def test_latlong_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        grad = latlong_gradient(v)
        eps = 1e-6
        basis = tangent_basis(v)
        for j in range(2):
            step = np.zeros(2)
            step[j] = eps
            hi = latlong_from_direction(rotate_direction(v, step))
            lo = latlong_from_direction(rotate_direction(v, -step))
            numeric = np.array([hi.phi - lo.phi, wrap_angle(hi.theta - lo.theta)]) / (2 * eps)
            assert_allclose(grad @ basis[:, j], numeric, rtol=1e-5, atol=1e-7)


def test_wrap_angle():
    assert wrap_angle(2 * math.pi - 0.1) == pytest.approx(-0.1)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_tangent_basis_is_orthonormal():
    rng = np.random.default_rng(4)
    for _ in range(100):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        b = tangent_basis(v)
        assert_allclose(b.T @ b, np.eye(2), atol=1e-12)
        assert_allclose(b.T @ v, [0, 0], atol=1e-12)


def test_reconstruct_line_examples():
    line = AnchoredLine([0.0, 0.0], 0, 0.5)
    result = reconstruct_line(line, [1.0, 0.0, 0.0], Pose.identity(), UNIT_K)
    assert_allclose(result.n, [0, 2, 0])
    assert_allclose(result.v, [1, 0, 0])

    line = AnchoredLine([0.0, 0.0], 0, 1.0)
    result = reconstruct_line(line, [0.0, 0.0, 1.0], Pose.identity(), UNIT_K)
    assert_allclose(result.n, [0, 0, 0])
    assert_allclose(result.v, [0, 0, 1])

    with pytest.raises(BehindCameraError):
        reconstruct_line(AnchoredLine([0.0, 0.0], 0, -0.1), [1.0, 0.0, 0.0], Pose.identity(), UNIT_K)


def test_ortho_round_trip_examples():
    line = PluckerLine([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    assert plucker_distance(line, plucker_from_ortho(ortho_from_plucker(line))) < 1e-9

    a = ortho_from_plucker(line)
    b = ortho_from_plucker(PluckerLine(line.n * 5, line.v * 5))
    assert_allclose(a.psi, b.psi, atol=1e-12)
    assert a.phi == pytest.approx(b.phi)


def test_ortho_round_trip_random():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        line = random_line(rng)
        assert plucker_distance(line, plucker_from_ortho(ortho_from_plucker(line))) < 1e-9


def test_ortho_line_through_origin():
    line = plucker_from_points([0, 0, 0], [0, 0, 2])
    assert plucker_distance(line, plucker_from_ortho(ortho_from_plucker(line))) < 1e-9


def test_ortho_line_works_on_read_only_storage():
    rng = np.random.default_rng(12)
    for _ in range(20):
        line = random_line(rng)
        o = ortho_from_plucker(line)
        assert not o.psi.flags.writeable
        assert_allclose(o.u.T @ o.u, np.eye(3), atol=1e-12)
        moved = o.retract([0.01, -0.02, 0.03, 0.05])
        assert not moved.psi.flags.writeable
        assert_allclose(moved.u, o.u @ Rotation.from_rotvec([0.01, -0.02, 0.03]).as_matrix(), atol=1e-12)
        assert moved.phi == pytest.approx(o.phi + 0.05)
        assert plucker_distance(line, plucker_from_ortho(o)) < 1e-9
    pose = random_pose(rng)
    assert not pose.rotation.flags.writeable
    assert_allclose(pose.retract(np.zeros(6)).rotation, pose.rotation, atol=1e-12)


def test_transform_line_examples():
    line = plucker_from_points([1, 2, 3], [4, -1, 0])
    same = transform_line(line, Pose.identity())
    assert_allclose(same.n, line.n)
    assert_allclose(same.v, line.v)

    r = Rotation.from_rotvec([0.1, -0.4, 0.3]).as_matrix()
    rotated = transform_line(line, Pose(r, np.zeros(3)))
    assert_allclose(rotated.n, r @ line.n, atol=1e-12)
    assert_allclose(rotated.v, r @ line.v, atol=1e-12)


def test_transform_line_matches_two_point_oracle():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        p1, p2 = rng.normal(size=3) * 3, rng.normal(size=3) * 3
        pose = random_pose(rng)
        moved = transform_line(plucker_from_points(p1, p2), pose)
        oracle = plucker_from_points(pose.transform_point(p1), pose.transform_point(p2))
        assert_allclose(moved.as_vector(), oracle.as_vector(), atol=1e-9)


def test_project_line_examples():
    n_c = np.array([0.3, -0.2, 0.7])
    assert_allclose(project_line(PluckerLine(n_c, [0.2, 0.3, 0.0]), UNIT_K), n_c)

    k = CameraIntrinsics(2.0, 3.0, 4.0, 5.0)
    assert_allclose(project_line(PluckerLine([0, 0, 1], [1, 0, 0]), k), [0, 0, 6])


def test_projected_line_passes_through_projected_points():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p1 = rng.normal(size=3) + [0, 0, 6]
        p2 = rng.normal(size=3) + [0, 0, 6]
        img = project_line(plucker_from_points(p1, p2), K)
        for p in (p1, p2, 0.3 * p1 + 0.7 * p2):
            pix = np.append(K.project(p), 1.0)
            assert abs(pix @ img) / np.linalg.norm(img[:2]) < 1e-9


def test_line_reprojection_error_examples():
    seg = Segment2D([3.0, 2.0], [7.0, -2.0])
    assert_allclose(line_reprojection_error([0.0, 1.0, 0.0], seg), [2.0, -2.0])
    assert_allclose(line_reprojection_error([0.0, 1.0, 0.0], Segment2D([1.0, 0.0], [5.0, 0.0])), [0.0, 0.0])
    with pytest.raises(DegenerateProjectionError):
        line_reprojection_error([0.0, 0.0, 1.0], seg)


def test_line_reprojection_error_scaling():
    seg = Segment2D([3.0, 2.0], [7.0, -2.0])
    img = np.array([0.3, 1.1, -2.0])
    base = line_reprojection_error(img, seg)
    assert_allclose(line_reprojection_error(4.5 * img, seg), base)
    assert_allclose(line_reprojection_error(-img, seg), -base)


def test_anchored_line_reprojects_to_zero():
    rng = np.random.default_rng(8)
    for _ in range(50):
        pose_cw = random_pose(rng)
        pose_wc = pose_cw.inverse()
        p1 = pose_wc.transform_point(rng.normal(size=3) + [0, 0, 6])
        p2 = pose_wc.transform_point(rng.normal(size=3) + [0, 0, 6])
        seg = Segment2D(K.project(pose_cw.transform_point(p1)), K.project(pose_cw.transform_point(p2)))
        true = plucker_from_points(p1, p2)
        r = inverse_depth_from_plucker(true, seg.midpoint, pose_wc, K)
        line = reconstruct_line(AnchoredLine(seg.midpoint, 0, r), true.v / np.linalg.norm(true.v), pose_wc, K)
        err = line_reprojection_error(project_line(transform_line(line, pose_cw), K), seg)
        assert_allclose(err, [0, 0], atol=1e-9)
        assert plucker_distance(line, true) < 1e-9


def test_fixed_direction_line_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(100):
        line = random_line(rng)
        fixed = FixedDirectionLine.from_plucker(line, line.v)
        assert plucker_distance(fixed.to_plucker(), line) < 1e-9


def test_pose_retract_and_inverse():
    rng = np.random.default_rng(10)
    pose = random_pose(rng)
    assert_allclose(pose.compose(pose.inverse()).rotation, np.eye(3), atol=1e-12)
    assert_allclose(pose.compose(pose.inverse()).translation, np.zeros(3), atol=1e-12)
    delta = np.array([0.01, -0.02, 0.03, 0.1, 0.2, -0.3])
    moved = pose.retract(delta)
    assert_allclose(moved.rotation, Rotation.from_rotvec(delta[:3]).as_matrix() @ pose.rotation, atol=1e-12)
    assert_allclose(moved.translation, pose.translation + delta[3:])


def test_interpretation_plane_contains_line():
    rng = np.random.default_rng(11)
    pose_cw = random_pose(rng)
    pose_wc = pose_cw.inverse()
    p1 = pose_wc.transform_point([0.5, -0.2, 5.0])
    p2 = pose_wc.transform_point([-0.4, 0.6, 7.0])
    seg = Segment2D(K.project(pose_cw.transform_point(p1)), K.project(pose_cw.transform_point(p2)))
    normal = interpretation_plane_normal(seg, pose_cw, K)
    assert abs(normal @ (p2 - p1)) / np.linalg.norm(p2 - p1) < 1e-9
    assert abs(normal @ (p1 - pose_cw.center)) / np.linalg.norm(p1 - pose_cw.center) < 1e-9
