import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloudgrasp.geometry import (BBox2D, BehindCameraError, CameraIntrinsics,
                                 EmptyInputError, FrameMismatchError,
                                 InvalidDepthError, PointCloud, Projection2D,
                                 RigidTransform, backproject, compose,
                                 identity_transform, iou, project, rotation_z,
                                 sensor_intrinsics, tight_bbox, transform)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestProject:
    def test_identity_pinhole_on_axis(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 10, 10)
        proj = project(PointCloud(np.array([[0.0, 0.0, 1.0]]), "cam"), intr)
        assert np.allclose(proj.points2d, [[0.0, 0.0]])

    def test_hand_pinhole(self):
        intr = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        proj = project(PointCloud(np.array([[0.1, 0.2, 1.0]]), "cam"), intr)
        assert np.allclose(proj.points2d, [[60.0, 70.0]])

    def test_behind_camera_identifies_index(self):
        intr = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        cloud = PointCloud(np.array([[0, 0, 1.0], [0, 0, -1.0]]), "cam")
        with pytest.raises(BehindCameraError) as e:
            project(cloud, intr)
        assert e.value.index == 1

    def test_order_preserved(self):
        intr = CameraIntrinsics(50, 60, 10, 20, 100, 100)
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.normal(size=10), rng.normal(size=10),
                               rng.uniform(0.5, 2.0, size=10)])
        proj = project(PointCloud(pts, "cam"), intr)
        u = intr.fx * pts[:, 0] / pts[:, 2] + intr.cx
        assert np.allclose(proj.points2d[:, 0], u)


class TestBackproject:
    def test_optical_axis_pixel(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 10, 10)
        cloud = backproject(np.array([[0.0, 0.0, 2.0]]), intr)
        assert np.allclose(cloud.points, [[0.0, 0.0, 2.0]])

    def test_inverse_of_project_example(self):
        intr = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        cloud = backproject(np.array([[60.0, 70.0, 1.0]]), intr)
        assert np.allclose(cloud.points, [[0.1, 0.2, 1.0]])

    def test_invalid_depth(self):
        intr = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        with pytest.raises(InvalidDepthError):
            backproject(np.array([[10.0, 10.0, 0.0]]), intr)

    def test_round_trip_100_random_pixels(self):
        intr = CameraIntrinsics(120, 110, 64, 48, 128, 96)
        rng = np.random.default_rng(1)
        rows = np.column_stack([rng.uniform(0, 128, 100), rng.uniform(0, 96, 100),
                                rng.uniform(0.3, 3.0, 100)])
        cloud = backproject(rows, intr, "cam")
        proj = project(cloud, intr)
        assert np.abs(proj.points2d - rows[:, :2]).max() < 1e-9


class TestTransform:
    def test_identity_relabels_frame(self):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]), "a")
        out = transform(cloud, identity_transform("a", "b"))
        assert out.frame_id == "b"
        assert np.array_equal(out.points, cloud.points)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), np.array([0.0, 0.0, 1.0]), "a", "b")
        out = transform(PointCloud(np.array([[1.0, 2.0, 3.0]]), "a"), t)
        assert np.allclose(out.points, [[1.0, 2.0, 4.0]])

    def test_frame_mismatch(self):
        t = RigidTransform(np.eye(3), np.zeros(3), "a", "b")
        with pytest.raises(FrameMismatchError):
            transform(PointCloud(np.array([[0.0, 0.0, 0.0]]), "c"), t)

    def test_compose_equals_sequential(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(20, 3))
        for _ in range(10):
            t1 = RigidTransform(random_rotation(rng), rng.normal(size=3), "a", "b")
            t2 = RigidTransform(random_rotation(rng), rng.normal(size=3), "b", "c")
            once = transform(PointCloud(pts, "a"), compose(t2, t1))
            twice = transform(transform(PointCloud(pts, "a"), t1), t2)
            assert np.abs(once.points - twice.points).max() < 1e-12

    def test_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            t = RigidTransform(random_rotation(rng), rng.normal(size=3), "a", "b")
            round_trip = compose(t.inverse(), t)
            assert np.abs(round_trip.rotation - np.eye(3)).max() < 1e-12
            assert np.abs(round_trip.translation).max() < 1e-12

    def test_composition_associative(self):
        rng = np.random.default_rng(4)
        ts = [RigidTransform(random_rotation(rng), rng.normal(size=3),
                             f"f{i}", f"f{i+1}") for i in range(3)]
        left = compose(compose(ts[2], ts[1]), ts[0])
        right = compose(ts[2], compose(ts[1], ts[0]))
        assert np.abs(left.rotation - right.rotation).max() < 1e-12
        assert np.abs(left.translation - right.translation).max() < 1e-12

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3), "a", "b")
        with pytest.raises(ValueError):  # reflection: det -1
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3), "a", "b")


class TestBBox:
    def test_single_point_degenerate(self):
        box = tight_bbox(Projection2D(np.array([[5.0, 7.0]])))
        assert (box.u_mid, box.v_mid, box.w, box.h) == (5.0, 7.0, 0.0, 0.0)

    def test_two_points_hand_case(self):
        box = tight_bbox(Projection2D(np.array([[10.0, 20.0], [30.0, 60.0]])))
        assert (box.u_mid, box.v_mid, box.w, box.h) == (20.0, 40.0, 20.0, 40.0)

    def test_interior_point_never_changes_box(self):
        pts = np.array([[10.0, 20.0], [30.0, 60.0]])
        box1 = tight_bbox(Projection2D(pts))
        box2 = tight_bbox(Projection2D(np.vstack([pts, [[20.0, 40.0]]])))
        assert box1 == box2

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            Projection2D(np.empty((0, 2)))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 100, size=(40, 2))
        box1 = tight_bbox(Projection2D(pts))
        box2 = tight_bbox(Projection2D(pts[rng.permutation(40)]))
        assert box1 == box2


class TestIou:
    def test_identical(self):
        a = BBox2D(10, 10, 4, 6)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BBox2D(0, 0, 2, 2), BBox2D(10, 10, 2, 2)) == 0.0

    def test_half_overlap_unit_squares(self):
        a = BBox2D(0.5, 0.5, 1, 1)
        b = BBox2D(1.0, 0.5, 1, 1)
        assert abs(iou(a, b) - 0.5 / 1.5) < 1e-12

    def test_degenerate_pair(self):
        assert iou(BBox2D(0, 0, 0, 0), BBox2D(0, 0, 0, 0)) == 0.0

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 20), st.floats(0, 20),
           st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 20), st.floats(0, 20))
    @settings(max_examples=60, deadline=None)
    def test_symmetry_and_range(self, u1, v1, w1, h1, u2, v2, w2, h2):
        a, b = BBox2D(u1, v1, w1, h1), BBox2D(u2, v2, w2, h2)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


class TestValidation:
    def test_cloud_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.nan]]), "cam")

    def test_cloud_rejects_empty(self):
        with pytest.raises(EmptyInputError):
            PointCloud(np.empty((0, 3)), "cam")

    def test_cloud_points_read_only(self):
        c = PointCloud(np.array([[1.0, 2.0, 3.0]]), "cam")
        with pytest.raises(ValueError):
            c.points[0, 0] = 9.0

    def test_sensor_intrinsics_bounds(self):
        with pytest.raises(ValueError):
            sensor_intrinsics(100, 100, -5, 50, 100, 100)
        with pytest.raises(ValueError):
            CameraIntrinsics(-1, 100, 50, 50, 100, 100)

    def test_rotation_z_is_rotation(self):
        r = rotation_z(0.7)
        assert np.allclose(r.T @ r, np.eye(3))
        assert np.isclose(np.linalg.det(r), 1.0)
