"""Grasp-trial evaluation protocol and the policies under test.

Each trial: observe the current scene, pick the next target (round-robin over
instances), plan one grasp, label it with the geometric oracle, then remove
the target from the scene regardless of outcome (no repeated grasping of the
same object). Scenes regenerate from fresh seeds until the trial budget is
spent. All randomness derives from (base seed, scene index, trial index), so
two policies evaluated with the same seeds see identical scene sequences:
paired trials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cem import (CemConfig, cem_optimize, cloud_init_mean, critic_scorer,
                   workspace_box_constraint)
from ..critic import CriticModel, critic_forward, pad_or_subsample
from ..geometry import BASE_FRAME, PointCloud, camera_frame
from ..grasp import GraspSample, GripperModel, grasp_oracle, to_grasp_frame
from ..scenesim.episode import Episode
from ..scenesim.labels import view_label, crop
from ..scenesim.render import SensorNoiseModel, camera_ring, render
from ..scenesim.scene import CameraRigConfig, Scene, SceneConfig, generate_scene
from ..shapepred import ShapeNetModel, intrinsics_features
from .metrics import MetricsReport


def observe(scene: Scene, scene_seed: int, rig: CameraRigConfig,
            noise: SensorNoiseModel | None, obs_seed: int) -> Episode:
    """Render the camera ring for the scene's current object set."""
    rng = np.random.default_rng(scene_seed ^ 0x5EED)
    views = camera_ring(scene, rig, rng)
    snapshots = [render(scene, pose, intr, noise=noise,
                        noise_seed=obs_seed * 131 + i, view_index=i)
                 for i, (pose, intr) in enumerate(views)]
    gt = {o.instance_id: scene.surface_points(o.instance_id)
          for o in scene.objects}
    return Episode(scene_seed, scene, snapshots, gt)


def default_workspace(scene: Scene, placement_radius: float = 0.20):
    r = placement_radius + 0.15
    lo = np.array([-r, -r, scene.table_height + 0.005])
    hi = np.array([r, r, scene.table_height + 0.35])
    return [workspace_box_constraint(lo, hi)]


def _best_view_for(episode: Episode, instance_id: int) -> int | None:
    counts = [(int(np.sum(s.mask == instance_id)), -i)
              for i, s in enumerate(episode.snapshots)]
    best = max(counts)
    return -best[1] if best[0] > 0 else None


class CriticPolicy:
    """CEM over the trained critic, on predicted full clouds or raw 2.5D."""

    def __init__(self, critic: CriticModel, shape_model: ShapeNetModel | None,
                 input_mode: str, cem_config: CemConfig | None = None,
                 crop_margin: float = 0.25, k_points: int | None = None):
        if input_mode == "full-cloud" and shape_model is None:
            raise ValueError("full-cloud policy needs a shape model")
        self.critic = critic
        self.shape_model = shape_model
        self.input_mode = input_mode
        self.cem_config = cem_config or CemConfig()
        self.crop_margin = crop_margin
        self.k_points = k_points or critic.config.k_points
        self.name = f"critic[{input_mode}]"

    def object_cloud(self, episode: Episode, instance_id: int) -> tuple[PointCloud, object] | None:
        view = _best_view_for(episode, instance_id)
        if view is None:
            return None
        snap = episode.snapshots[view]
        lab = view_label(snap, instance_id)
        if lab is None:
            return None
        if self.input_mode == "partial-2.5D":
            pts = pad_or_subsample(lab.partial_cloud.points, self.k_points,
                                   seed=episode.seed * 71 + instance_id)
        else:
            cr = crop(snap, lab.bbox, instance_id, margin=self.crop_margin,
                      out_size=self.shape_model.config.crop_size)
            feats = intrinsics_features(cr.intrinsics, cr.window, snap.intrinsics)
            pts = self.shape_model.forward(cr.image[None], feats[None]).values[0]
        return PointCloud(pts, camera_frame(view)), snap.camera_pose.inverse()

    def plan(self, episode: Episode, instance_id: int,
             rng: np.random.Generator) -> GraspSample | None:
        got = self.object_cloud(episode, instance_id)
        if got is None:
            return None
        cloud_cam, cam_to_base = got
        cloud_base = PointCloud(cam_to_base.apply(cloud_cam.points), BASE_FRAME)
        scorer = critic_scorer(self.critic, cloud_cam, cam_to_base,
                               shuffle_seed=int(rng.integers(1 << 31)))
        init = cloud_init_mean(cloud_base)
        constraints = default_workspace(episode.scene)
        result = cem_optimize(scorer, init, self.cem_config, constraints, rng)
        return result.best_sample


class OracleScorerPolicy:
    """Upper-bound policy: CEM directly on the 0/1 grasp oracle with
    ground-truth clouds (pipeline ceiling)."""

    def __init__(self, gripper: GripperModel | None = None,
                 cem_config: CemConfig | None = None):
        self.gripper = gripper or GripperModel()
        self.cem_config = cem_config or CemConfig()
        self.name = "oracle-scorer"

    def plan(self, episode: Episode, instance_id: int,
             rng: np.random.Generator) -> GraspSample:
        scene = episode.scene
        cloud_base = PointCloud(episode.gt_clouds[instance_id], BASE_FRAME)

        def scorer(s: GraspSample) -> float:
            return 1.0 if grasp_oracle(scene, instance_id, s, self.gripper) else 0.0

        init = cloud_init_mean(cloud_base)
        constraints = default_workspace(scene)
        return cem_optimize(scorer, init, self.cem_config, constraints, rng).best_sample


class RandomPolicy:
    """Floor: uniform position over the workspace box, uniform yaw."""

    def __init__(self, placement_radius: float = 0.20):
        self.placement_radius = placement_radius
        self.name = "random"

    def plan(self, episode: Episode, instance_id: int,
             rng: np.random.Generator) -> GraspSample:
        r = self.placement_radius + 0.15
        scene = episode.scene
        p = np.array([rng.uniform(-r, r), rng.uniform(-r, r),
                      rng.uniform(scene.table_height + 0.005, scene.table_height + 0.35)])
        return GraspSample(p, rng.uniform(-np.pi / 2, np.pi / 2))


@dataclass
class TrialRecord:
    scene_seed: int
    trial_index: int
    instance_id: int
    success: bool


def eval_grasp_protocol(policy, trials: int, base_seed: int,
                        scene_config: SceneConfig | None = None,
                        rig_config: CameraRigConfig | None = None,
                        noise: SensorNoiseModel | None = None,
                        gripper: GripperModel | None = None,
                        scene_seed_offset: int = 500_000) -> tuple[list[TrialRecord], float]:
    """Run the removal protocol for `trials` grasps; returns records and rate."""
    scene_config = scene_config or SceneConfig()
    rig_config = rig_config or CameraRigConfig()
    gripper = gripper or GripperModel()
    records: list[TrialRecord] = []
    scene_idx = 0
    while len(records) < trials:
        scene_seed = scene_seed_offset + base_seed * 10_000 + scene_idx
        scene = generate_scene(scene_seed, scene_config)
        targets = sorted(scene.instance_ids())
        for t_i, target in enumerate(targets):
            if len(records) >= trials:
                break
            episode = observe(scene, scene_seed, rig_config, noise,
                              obs_seed=base_seed * 97 + scene_idx * 13 + t_i)
            rng = np.random.default_rng([base_seed, scene_idx, t_i])
            s = policy.plan(episode, target, rng)
            ok = bool(s is not None and
                      grasp_oracle(scene, target, s, gripper))
            records.append(TrialRecord(scene_seed, len(records), target, ok))
            scene = scene.without_object(target)
            if not scene.objects:
                break
        scene_idx += 1
    rate = float(np.mean([r.success for r in records]))
    return records, rate
