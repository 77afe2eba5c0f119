"""Episode = one scene observed from a ring of RGBD viewpoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import PointCloud, RigidTransform, compose, camera_frame
from .render import SensorNoiseModel, Snapshot, camera_ring, render
from .scene import CameraRigConfig, Scene, SceneConfig, generate_scene


@dataclass
class Episode:
    """A scene, its snapshots, and ground-truth surface clouds (world frame).

    Ground-truth clouds exist for evaluation oracles only; training labels are
    always derived from the rendered observations.
    """

    seed: int
    scene: Scene
    snapshots: list[Snapshot]
    gt_clouds: dict[int, np.ndarray]  # instance_id -> (n, 3) world-frame points

    def views_seeing(self, instance_id: int) -> list[int]:
        return [i for i, s in enumerate(self.snapshots)
                if np.any(s.mask == instance_id)]

    def relative_pose(self, src_view: int, dst_view: int) -> RigidTransform:
        """Camera(src) -> camera(dst) transform from the known rig poses."""
        src = self.snapshots[src_view].camera_pose
        dst = self.snapshots[dst_view].camera_pose
        return compose(dst, src.inverse())

    def gt_cloud_in_camera(self, instance_id: int, view: int) -> PointCloud:
        pts = self.snapshots[view].camera_pose.apply(self.gt_clouds[instance_id])
        return PointCloud(pts, camera_frame(view))


def generate_episode(seed: int, scene_config: SceneConfig | None = None,
                     rig_config: CameraRigConfig | None = None,
                     noise: SensorNoiseModel | None = None) -> Episode:
    """Render a full multi-view episode; pure function of its arguments.

    Episode batches parallelize by deriving per-episode seeds as
    base_seed + index and calling this independently per episode.
    """
    scene_config = scene_config or SceneConfig()
    rig_config = rig_config or CameraRigConfig()
    scene = generate_scene(seed, scene_config)
    rng = np.random.default_rng(seed ^ 0x5EED)
    views = camera_ring(scene, rig_config, rng)
    snapshots = [
        render(scene, pose, intr, noise=noise,
               noise_seed=(seed * 1_000_003 + i), view_index=i,
               table_half_extent=scene_config.table_half_extent)
        for i, (pose, intr) in enumerate(views)
    ]
    gt_clouds = {o.instance_id: scene.surface_points(o.instance_id,
                                                     scene_config.gt_cloud_points)
                 for o in scene.objects}
    return Episode(seed, scene, snapshots, gt_clouds)
