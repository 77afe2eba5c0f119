"""Analytic depth/color/mask rendering by per-pixel ray-primitive intersection.

Rays are cast through pixel centers with camera-frame direction
((u-cx)/fx, (v-cy)/fy, 1), so the intersection parameter t equals the z-depth
directly. Depth 0 marks background / invalid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import (CameraIntrinsics, RigidTransform, camera_frame,
                        sensor_intrinsics, BASE_FRAME)
from .primitives import Box, PrimitiveObject
from .scene import BACKGROUND, CameraRigConfig, Scene, TABLE_INSTANCE

_LIGHT_DIR = np.array([0.3, -0.25, 0.9])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)


class ConfigError(ValueError):
    """Bad render configuration (degenerate intrinsics etc.)."""


@dataclass
class SensorNoiseModel:
    """Depth corruption: additive gaussian, dropout holes, quantization."""

    sigma: float = 0.0            # meters
    hole_prob: float = 0.0        # per-pixel probability of depth -> invalid
    quantization: float = 0.0     # step in meters; 0 disables

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 0.0 <= self.hole_prob <= 1.0:
            raise ValueError("hole probability must be in [0, 1]")

    def is_zero(self) -> bool:
        return self.sigma == 0.0 and self.hole_prob == 0.0 and self.quantization == 0.0


@dataclass
class Snapshot:
    """One rendered RGBD + instance-mask view of a scene."""

    view_index: int
    camera_pose: RigidTransform      # world -> camera
    intrinsics: CameraIntrinsics
    depth: np.ndarray                # (h, w) meters, 0 where invalid
    color: np.ndarray                # (h, w, 3) in [0, 1]
    mask: np.ndarray                 # (h, w) int, instance_id or BACKGROUND

    @property
    def frame_id(self) -> str:
        return self.camera_pose.to_frame


def look_at(eye: np.ndarray, target: np.ndarray, view_index: int) -> RigidTransform:
    """World->camera transform with x right, y down, z forward toward target."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight down: pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=0)
    return RigidTransform(rot, -rot @ eye, BASE_FRAME, camera_frame(view_index))


def camera_ring(scene: Scene, rig: CameraRigConfig, rng: np.random.Generator
                ) -> list[tuple[RigidTransform, CameraIntrinsics]]:
    """Real viewpoints on a one-sided arc, plus virtual views closing the ring."""
    radius = rng.uniform(*rig.radius_range)
    eye_z = rng.uniform(*rig.eye_height_range)
    target = np.array([0.0, 0.0, scene.table_height + 0.05])

    half_arc = np.deg2rad(rig.arc_degrees) / 2
    azimuths = list(np.linspace(-half_arc, half_arc, rig.n_real_views))
    if rig.include_virtual and rig.n_virtual_views > 0:
        gap = 2 * np.pi - 2 * half_arc
        step = gap / (rig.n_virtual_views + 1)
        azimuths += [half_arc + step * (k + 1) for k in range(rig.n_virtual_views)]

    intr = sensor_intrinsics(rig.focal, rig.focal, rig.image_width / 2,
                             rig.image_height / 2, rig.image_width, rig.image_height)
    views = []
    for i, az in enumerate(azimuths):
        eye = np.array([radius * np.cos(az), radius * np.sin(az), eye_z])
        views.append((look_at(eye, target, i), intr))
    return views


def _table_object(scene: Scene, half_extent: float) -> PrimitiveObject:
    top = Box([half_extent, half_extent, 0.01])
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, scene.table_height - 0.01]),
                          "object", BASE_FRAME)
    return PrimitiveObject(top, pose, TABLE_INSTANCE, np.array([0.55, 0.5, 0.45]))


def render(scene: Scene, camera_pose: RigidTransform, intrinsics: CameraIntrinsics,
           noise: SensorNoiseModel | None = None, noise_seed: int = 0,
           view_index: int | None = None, table_half_extent: float = 0.40) -> Snapshot:
    """Ray-cast a snapshot; deterministic given all arguments."""
    if intrinsics.fx <= 0 or intrinsics.fy <= 0 or intrinsics.width <= 0 \
            or intrinsics.height <= 0:
        raise ConfigError("degenerate intrinsics")
    h, w = intrinsics.height, intrinsics.width
    if view_index is None:
        name = camera_pose.to_frame
        view_index = int(name[3:]) if name.startswith("cam") and name[3:].isdigit() else 0

    # pixel-center ray grid in the camera frame, z component 1 => t is z-depth
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - intrinsics.cx) / intrinsics.fx,
                         (vs - intrinsics.cy) / intrinsics.fy,
                         np.ones_like(us)], axis=-1).reshape(-1, 3)
    cam_to_world = camera_pose.inverse()
    eye = cam_to_world.translation
    dirs_world = dirs_cam @ cam_to_world.rotation.T
    origins = np.broadcast_to(eye, dirs_world.shape)

    renderables = [_table_object(scene, table_half_extent)] + list(scene.objects)
    n_px = h * w
    depth = np.full(n_px, np.inf)
    owner = np.full(n_px, BACKGROUND, dtype=np.int64)
    for obj in renderables:
        t = obj.intersect_world(origins, dirs_world)
        closer = t < depth
        depth = np.where(closer, t, depth)
        owner = np.where(closer, obj.instance_id, owner)

    hit = np.isfinite(depth)
    depth = np.where(hit, depth, 0.0)

    # flat shading: per-object color with a lambertian term from a fixed light
    color = np.zeros((n_px, 3))
    points_world = origins + depth[:, None] * dirs_world
    for obj in renderables:
        m = owner == obj.instance_id
        if not np.any(m):
            continue
        normals = obj.normals_world(points_world[m])
        lam = 0.35 + 0.65 * np.clip(normals @ _LIGHT_DIR, 0.0, 1.0)
        color[m] = np.clip(obj.color * lam[:, None], 0.0, 1.0)

    mask = np.where(owner == TABLE_INSTANCE, BACKGROUND, owner)

    if noise is not None and not noise.is_zero():
        rng = np.random.default_rng(noise_seed)
        valid = depth > 0
        if noise.sigma > 0:
            depth = np.where(valid, depth + rng.normal(0.0, noise.sigma, size=n_px), depth)
            depth = np.maximum(depth, 0.0)
        if noise.hole_prob > 0:
            holes = rng.uniform(size=n_px) < noise.hole_prob
            depth = np.where(valid & holes, 0.0, depth)
        if noise.quantization > 0:
            q = noise.quantization
            depth = np.where(depth > 0, np.round(depth / q) * q, depth)

    return Snapshot(
        view_index=view_index,
        camera_pose=camera_pose,
        intrinsics=intrinsics,
        depth=depth.reshape(h, w),
        color=color.reshape(h, w, 3),
        mask=mask.reshape(h, w).astype(np.int64),
    )
