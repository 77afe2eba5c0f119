import numpy as np
import pytest

from cloudgrasp.geometry import (BASE_FRAME, EmptyInputError, FrameMismatchError,
                                 PointCloud, RigidTransform, identity_transform,
                                 rotation_z, camera_frame)
from cloudgrasp.grasp import (GraspSample, GripperModel, fisher_yates, grasp_oracle,
                              grasp_pose, heuristic_sample, to_grasp_frame)
from cloudgrasp.scenesim.primitives import Box, Cylinder, PrimitiveObject, Sphere
from cloudgrasp.scenesim.scene import Scene


def resting(shape, x, y, yaw, table_h, instance_id=1):
    z = table_h - shape.min_z()
    pose = RigidTransform(rotation_z(yaw), np.array([x, y, z]), "object", BASE_FRAME)
    return PrimitiveObject(shape, pose, instance_id, np.full(3, 0.5))


class TestGraspSample:
    def test_psi_range_enforced(self):
        with pytest.raises(ValueError):
            GraspSample(np.zeros(3), 2.0)

    def test_array_round_trip(self):
        s = GraspSample(np.array([0.1, -0.2, 0.45]), 0.3)
        assert np.array_equal(GraspSample.from_array(s.as_array()).as_array(),
                              s.as_array())


class TestToGraspFrame:
    def test_identity_everything(self):
        cloud = PointCloud(np.array([[0.1, 0.2, 0.3], [0.0, 0.0, 0.0]]), "cam0")
        s = GraspSample(np.zeros(3), 0.0)
        out = to_grasp_frame(cloud, s, identity_transform("cam0", BASE_FRAME))
        assert out.frame_id == "grasp"
        assert np.allclose(out.points, cloud.points)

    def test_grasp_point_maps_to_origin(self):
        p = np.array([0.3, -0.1, 0.5])
        cloud = PointCloud(p[None], "cam0")
        for psi in (-1.0, 0.0, 0.8):
            out = to_grasp_frame(cloud, GraspSample(p, psi),
                                 identity_transform("cam0", BASE_FRAME))
            assert np.abs(out.points).max() < 1e-12

    def test_yaw_rotates_x_into_minus_y(self):
        # point one meter along base x; grasp at origin with psi = pi/2:
        # grasp-frame x axis = base y, so the point lands at (0, -1, 0)
        cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]), "cam0")
        out = to_grasp_frame(cloud, GraspSample(np.zeros(3), np.pi / 2),
                             identity_transform("cam0", BASE_FRAME))
        assert np.allclose(out.points, [[0.0, -1.0, 0.0]], atol=1e-12)

    def test_inverse_recovers_cloud(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 3))
        cloud = PointCloud(pts, "cam0")
        cam_to_base = RigidTransform(rotation_z(0.4), np.array([0.1, 0.2, 0.3]),
                                     "cam0", BASE_FRAME)
        s = GraspSample(np.array([0.05, -0.02, 0.4]), 0.7)
        out = to_grasp_frame(cloud, s, cam_to_base)  # no shuffle
        back = grasp_pose(s).apply(out.points)
        cam = cam_to_base.inverse().apply(back)
        assert np.abs(cam - pts).max() < 1e-12

    def test_frame_mismatch(self):
        cloud = PointCloud(np.ones((1, 3)), "cam1")
        with pytest.raises(FrameMismatchError):
            to_grasp_frame(cloud, GraspSample(np.zeros(3), 0.0),
                           identity_transform("cam0", BASE_FRAME))

    def test_shuffle_is_permutation(self):
        rng = np.random.default_rng(3)
        idx = fisher_yates(100, rng)
        assert sorted(idx.tolist()) == list(range(100))
        cloud = PointCloud(np.arange(30.0).reshape(10, 3), "cam0")
        out = to_grasp_frame(cloud, GraspSample(np.zeros(3), 0.0),
                             identity_transform("cam0", BASE_FRAME),
                             rng=np.random.default_rng(1))
        assert sorted(map(tuple, out.points)) == sorted(map(tuple, cloud.points))


class TestHeuristicSample:
    def test_zero_sigma_hits_centroid(self):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]]), BASE_FRAME)
        s = heuristic_sample(cloud, np.random.default_rng(0), sigma=0.0)
        assert np.allclose(s.p, [2.0, 3.0, 4.0])

    def test_symmetric_two_point_centroid(self):
        cloud = PointCloud(np.array([[-1.0, 0.0, 1.0], [1.0, 0.0, 1.0]]), BASE_FRAME)
        s = heuristic_sample(cloud, np.random.default_rng(0), sigma=0.0)
        assert np.allclose(s.p, [0.0, 0.0, 1.0])

    def test_yaw_distribution(self):
        # paper: psi uniform in [-pi/2, pi/2]; statistics over 1e4 draws
        rng = np.random.default_rng(42)
        cloud = PointCloud(np.zeros((1, 3)), BASE_FRAME)
        psis = np.array([heuristic_sample(cloud, rng).psi for _ in range(10_000)])
        assert psis.min() >= -np.pi / 2 and psis.max() <= np.pi / 2
        se = (np.pi / np.sqrt(12)) / np.sqrt(len(psis))
        assert abs(psis.mean()) < 3 * se

    def test_noise_clipped_to_three_sigma(self):
        rng = np.random.default_rng(0)
        cloud = PointCloud(np.zeros((1, 3)), BASE_FRAME)
        ps = np.array([heuristic_sample(cloud, rng, sigma=0.02).p
                       for _ in range(2000)])
        assert np.abs(ps).max() <= 0.06 + 1e-12


class TestGraspOracle:
    table = 0.40

    def test_thin_cylinder_any_yaw(self):
        cyl = Cylinder(0.015, 0.10)  # 3 cm diameter
        scene = Scene(self.table, [resting(cyl, 0, 0, 0.0, self.table)])
        s_mid = np.array([0.0, 0.0, self.table + 0.05])
        for psi in np.linspace(-np.pi / 2, np.pi / 2, 7):
            assert grasp_oracle(scene, 1, GraspSample(s_mid, psi))

    def test_far_away_no_contact(self):
        cyl = Cylinder(0.015, 0.10)
        scene = Scene(self.table, [resting(cyl, 0, 0, 0.0, self.table)])
        s = GraspSample(np.array([0.5, 0.0, self.table + 0.05]), 0.0)
        assert not grasp_oracle(scene, 1, s)

    def test_wide_box_yaw_dependence(self):
        # 10 cm extent along the closing axis exceeds the 8 cm jaw; the 4 cm
        # side fits after rotating by pi/2
        box = Box([0.05, 0.02, 0.04])
        scene = Scene(self.table, [resting(box, 0, 0, 0.0, self.table)])
        center = np.array([0.0, 0.0, self.table + 0.04])
        assert not grasp_oracle(scene, 1, GraspSample(center, 0.0))
        assert grasp_oracle(scene, 1, GraspSample(center, np.pi / 2))

    def test_unknown_instance(self):
        scene = Scene(self.table, [resting(Sphere(0.03), 0, 0, 0, self.table)])
        with pytest.raises(KeyError):
            grasp_oracle(scene, 77, GraspSample(np.zeros(3), 0.0))

    def test_fingertips_below_table_fail(self):
        sphere = Sphere(0.03)
        scene = Scene(self.table, [resting(sphere, 0, 0, 0, self.table)])
        low = GraspSample(np.array([0.0, 0.0, self.table + 0.01]), 0.0)
        assert not grasp_oracle(scene, 1, low)

    def test_neighbor_collision(self):
        a = resting(Cylinder(0.02, 0.10), 0.0, 0.0, 0.0, self.table, 1)
        b = resting(Box([0.03, 0.03, 0.05]), 0.055, 0.0, 0.0, self.table, 2)
        scene = Scene(self.table, [a, b])
        s = GraspSample(np.array([0.0, 0.0, self.table + 0.05]), 0.0)
        # closing axis x points straight at the neighbor: corridor hits it
        assert not grasp_oracle(scene, 1, s)
        # rotate so the fingers clear the neighbor
        assert grasp_oracle(scene, 1, GraspSample(s.p, np.pi / 2))

    def test_jaw_width_monotonicity(self):
        rng = np.random.default_rng(1)
        from cloudgrasp.scenesim import generate_episode
        flips = 0
        total = 0
        for seed in range(5):
            ep = generate_episode(seed=seed)
            for obj in ep.scene.objects:
                cloud = PointCloud(ep.gt_clouds[obj.instance_id], BASE_FRAME)
                for _ in range(4):
                    s = heuristic_sample(cloud, rng)
                    small = grasp_oracle(ep.scene, obj.instance_id, s,
                                         GripperModel(jaw_width=0.06))
                    large = grasp_oracle(ep.scene, obj.instance_id, s,
                                         GripperModel(jaw_width=0.11))
                    total += 1
                    flips += int(small and not large)
        assert flips == 0 and total > 0

    def test_invariant_under_nontarget_relabeling(self):
        a = resting(Cylinder(0.02, 0.10), 0.0, 0.0, 0.0, self.table, 1)
        b = resting(Sphere(0.03), 0.12, 0.0, 0.0, self.table, 2)
        c = resting(Box([0.02, 0.02, 0.04]), -0.12, 0.0, 0.0, self.table, 3)
        s = GraspSample(np.array([0.0, 0.0, self.table + 0.05]), 0.3)
        r1 = grasp_oracle(Scene(self.table, [a, b, c]), 1, s)
        b2 = PrimitiveObject(b.shape, b.pose, 9, b.color)
        c2 = PrimitiveObject(c.shape, c.pose, 5, c.color)
        r2 = grasp_oracle(Scene(self.table, [a, c2, b2]), 1, s)
        assert r1 == r2

    def test_gripper_validation(self):
        with pytest.raises(ValueError):
            GripperModel(jaw_width=-0.1)
