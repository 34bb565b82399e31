import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posealign.errors import DegenerateProjection, GimbalLockWarning, NonOrthonormalInput
from posealign.geometry import (
    BoundingBox,
    HeadPose,
    Shape2D,
    Shape3D,
    SimilarityTransform,
    apply_similarity,
    euler_to_rotation,
    load_mean_face,
    project_weak_perspective,
    rotation_to_euler,
    similarity_between_boxes,
)

angles = st.floats(-90.0, 90.0, allow_nan=False, allow_infinity=False)
safe_yaw = st.floats(-88.0, 88.0, allow_nan=False, allow_infinity=False)


def boxes(min_side=1.0, max_side=500.0):
    side = st.floats(min_side, max_side, allow_nan=False, allow_infinity=False)
    coord = st.floats(-1000.0, 1000.0, allow_nan=False, allow_infinity=False)
    return st.builds(BoundingBox, coord, coord, side, side)


class TestTypes:
    def test_shape2d_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            Shape2D(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            Shape2D(np.array([[1.0, 2.0]]))
        with pytest.raises(ValueError):
            Shape2D(np.array([[np.nan, 0.0], [0.0, 0.0]]))

    def test_shape2d_is_immutable(self):
        shape = Shape2D(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            shape.points[0, 0] = 1.0

    def test_shape2d_flat_round_trip(self):
        pts = np.arange(10, dtype=float).reshape(5, 2)
        assert np.array_equal(Shape2D.from_flat(Shape2D(pts).flat()).points, pts)

    def test_shape3d_requires_centering(self):
        pts = np.random.default_rng(0).normal(size=(68, 3)) + 5.0
        with pytest.raises(ValueError):
            Shape3D(pts)
        assert np.abs(Shape3D.centered(pts).points.mean(axis=0)).max() < 1e-12

    def test_shape3d_rejects_collinear(self):
        line = np.outer(np.linspace(-1, 1, 68), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            Shape3D(line)

    def test_head_pose_bounds(self):
        HeadPose(90.0, -90.0, 0.0)
        with pytest.raises(ValueError):
            HeadPose(91.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            HeadPose(0.0, float("nan"), 0.0)

    def test_bounding_box_requires_positive_size(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 0.0, 10)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 10, -1)

    def test_box_center_and_corners(self):
        bb = BoundingBox(2, 3, 10, 20)
        assert np.array_equal(bb.center, [7.0, 13.0])
        assert bb.corners.shape == (4, 2)
        assert np.array_equal(bb.corners[0], [2.0, 3.0])
        assert np.array_equal(bb.corners[2], [12.0, 23.0])


class TestEuler:
    def test_identity_pose(self):
        assert np.allclose(euler_to_rotation(HeadPose(0, 0, 0)), np.eye(3), atol=1e-15)

    def test_single_axis_against_basis_vectors(self):
        # yaw turns the camera axis (+z) toward +x
        r = euler_to_rotation(HeadPose(0, 40, 0))
        assert np.allclose(r @ [0, 0, 1], [math.sin(math.radians(40)), 0, math.cos(math.radians(40))])
        # pitch turns +z toward -y (upward in image coordinates)
        r = euler_to_rotation(HeadPose(30, 0, 0))
        assert np.allclose(r @ [0, 0, 1], [0, -math.sin(math.radians(30)), math.cos(math.radians(30))])
        # roll turns +x toward +y
        r = euler_to_rotation(HeadPose(0, 0, 25))
        assert np.allclose(r @ [1, 0, 0], [math.cos(math.radians(25)), math.sin(math.radians(25)), 0])

    @given(angles, angles, angles)
    def test_composition_order_roll_yaw_pitch(self, p, y, r):
        composed = (
            euler_to_rotation(HeadPose(0, 0, r))
            @ euler_to_rotation(HeadPose(0, y, 0))
            @ euler_to_rotation(HeadPose(p, 0, 0))
        )
        assert np.allclose(euler_to_rotation(HeadPose(p, y, r)), composed, atol=1e-12)

    @given(angles, angles, angles)
    def test_rotation_is_orthonormal(self, p, y, r):
        rot = euler_to_rotation(HeadPose(p, y, r))
        assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(rot) - 1.0) < 1e-12

    @given(angles, safe_yaw, angles)
    def test_euler_round_trip(self, p, y, r):
        pose = HeadPose(p, y, r)
        back = rotation_to_euler(euler_to_rotation(pose))
        assert abs(back.pitch - pose.pitch) < 1e-6
        assert abs(back.yaw - pose.yaw) < 1e-6
        assert abs(back.roll - pose.roll) < 1e-6

    def test_rejects_non_rotation(self):
        with pytest.raises(NonOrthonormalInput):
            rotation_to_euler(np.eye(2))
        with pytest.raises(NonOrthonormalInput):
            rotation_to_euler(1.1 * np.eye(3))
        with pytest.raises(NonOrthonormalInput):
            rotation_to_euler(np.diag([1.0, 1.0, -1.0]))

    @pytest.mark.parametrize("yaw_sign", [1.0, -1.0])
    def test_gimbal_lock_zeroes_roll(self, yaw_sign):
        pose = HeadPose(10.0, yaw_sign * 90.0, 25.0)
        rot = euler_to_rotation(pose)
        with pytest.warns(GimbalLockWarning):
            back = rotation_to_euler(rot)
        assert back.roll == 0.0
        assert back.yaw == yaw_sign * 90.0
        # only the pitch/roll combination is observable at the singularity;
        # the re-encoded rotation must still reproduce the input
        assert np.allclose(euler_to_rotation(back), rot, atol=1e-9)


class TestProjection:
    def test_frontal_projection_fills_box_width(self, mean_face):
        bb = BoundingBox(10, 20, 80, 80)
        proj = project_weak_perspective(mean_face, HeadPose(0, 0, 0), bb)
        assert abs(np.ptp(proj.points[:, 0]) - bb.w) < 1e-9
        assert np.allclose(proj.centroid(), bb.center, atol=1e-9)

    @given(angles, angles, angles)
    def test_centroid_always_at_box_center(self, mean_face, p, y, r):
        bb = BoundingBox(-5.0, 7.0, 64.0, 48.0)
        try:
            proj = project_weak_perspective(mean_face, HeadPose(p, y, r), bb)
        except DegenerateProjection:
            return
        assert np.allclose(proj.centroid(), bb.center, atol=1e-9)

    @given(st.integers(-300, 300), st.integers(-300, 300))
    def test_translation_equivariance_exact(self, mean_face, dx, dy):
        pose = HeadPose(15, -30, 5)
        base = BoundingBox(8.0, 16.0, 80.0, 80.0)
        p0 = project_weak_perspective(mean_face, pose, base)
        p1 = project_weak_perspective(mean_face, pose, base.translated(float(dx), float(dy)))
        assert np.allclose(p1.points, p0.points + [float(dx), float(dy)], atol=1e-9)

    def test_scale_linearity(self, mean_face):
        pose = HeadPose(-20, 35, 10)
        small = BoundingBox(0, 0, 50, 50)
        big = BoundingBox(0, 0, 100, 100)
        ps = project_weak_perspective(mean_face, pose, small)
        pb = project_weak_perspective(mean_face, pose, big)
        rel_s = ps.points - ps.centroid()
        rel_b = pb.points - pb.centroid()
        assert np.allclose(rel_b, 2.0 * rel_s, atol=1e-9)

    def test_yaw_sign_moves_nose_right(self, mean_face):
        # positive yaw turns the face so the nose tip moves toward +x
        bb = BoundingBox(0, 0, 80, 80)
        frontal = project_weak_perspective(mean_face, HeadPose(0, 0, 0), bb)
        turned = project_weak_perspective(mean_face, HeadPose(0, 40, 0), bb)
        assert turned.points[30, 0] > frontal.points[30, 0]

    def test_zero_width_shape_rejected(self, mean_face):
        flat = mean_face.points.copy()
        flat[:, 0] = 0.0
        shape = Shape3D.centered(flat)
        with pytest.raises(DegenerateProjection):
            project_weak_perspective(shape, HeadPose(0, 0, 0), BoundingBox(0, 0, 80, 80))

    def test_collapsed_projection_rejected(self):
        idx = np.arange(68)
        pts = np.stack(
            [np.linspace(-1, 1, 68), 1e-10 * np.sin(idx), 1e-10 * np.cos(idx)], axis=1
        )
        thin = Shape3D.centered(pts)
        with pytest.raises(DegenerateProjection):
            project_weak_perspective(thin, HeadPose(0, 90, 0), BoundingBox(0, 0, 80, 80))


class TestSimilarity:
    def test_identity_is_noop(self):
        shape = Shape2D(np.arange(8, dtype=float).reshape(4, 2))
        out = apply_similarity(SimilarityTransform.identity(), shape)
        assert np.array_equal(out.points, shape.points)

    def test_scale_about_origin_doubles(self):
        t = SimilarityTransform(2.0, 0.0, np.zeros(2))
        shape = Shape2D(np.array([[1.0, -2.0], [3.0, 4.0]]))
        assert np.array_equal(apply_similarity(t, shape).points, 2.0 * shape.points)

    @given(
        st.floats(0.1, 10.0),
        st.floats(-math.pi, math.pi),
        st.floats(-50.0, 50.0),
        st.floats(-50.0, 50.0),
    )
    def test_inverse_round_trip(self, scale, rot, tx, ty):
        t = SimilarityTransform(scale, rot, np.array([tx, ty]))
        shape = Shape2D(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, -2.0]]))
        back = apply_similarity(t.inverse(), apply_similarity(t, shape))
        assert np.allclose(back.points, shape.points, atol=1e-9)

    @given(boxes(), boxes())
    def test_box_to_box_maps_centers_and_width(self, a, b):
        t = similarity_between_boxes(a, b)
        assert np.allclose(t.apply(a.center.reshape(1, 2))[0], b.center, atol=1e-6)
        mapped = t.apply(a.corners)
        assert abs(np.ptp(mapped[:, 0]) - b.w) < 1e-6 * max(1.0, b.w)

    @given(boxes(), boxes())
    def test_box_round_trip_is_identity(self, a, b):
        t = similarity_between_boxes(b, a).compose(similarity_between_boxes(a, b))
        pts = np.array([[0.0, 0.0], [17.0, -4.0], [-3.0, 9.0]])
        assert np.allclose(t.apply(pts), pts, atol=1e-6)


class TestMeanFace:
    def test_shape_and_centering(self, mean_face):
        assert mean_face.points.shape == (68, 3)
        assert np.abs(mean_face.points.mean(axis=0)).max() < 1e-9

    def test_frontal_width_is_two_model_units(self, mean_face):
        assert abs(mean_face.frontal_width() - 2.0) < 1e-9

    def test_mirror_symmetry_about_x(self, mean_face):
        pairs = (
            [(i, 16 - i) for i in range(8)]
            + [(17 + i, 26 - i) for i in range(5)]
            + [(31, 35), (32, 34)]
            + [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)]
            + [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)]
            + [(60, 64), (61, 63), (65, 67)]
        )
        pts = mean_face.points
        for a, b in pairs:
            assert np.allclose(pts[a] * [-1, 1, 1], pts[b], atol=1e-9), (a, b)

    def test_eye_corners_are_widest_eye_points(self, mean_face):
        pts = mean_face.points
        assert pts[36, 0] < pts[39, 0] < 0 < pts[42, 0] < pts[45, 0]
        assert np.linalg.norm(pts[45] - pts[36]) > 1.0

    def test_nose_tip_is_closest_to_camera(self, mean_face):
        assert np.argmax(mean_face.points[:, 2]) == 30

    def test_loader_result_is_cached_consistent(self):
        a = load_mean_face()
        b = load_mean_face()
        assert np.array_equal(a.points, b.points)
