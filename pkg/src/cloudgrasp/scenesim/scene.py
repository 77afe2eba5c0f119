"""Procedural table-top scene generation.

A scene is a table plane at a random height with 4-5 primitive objects resting
on it, placed with non-overlapping footprints. Objects are upright with a
random yaw; sizes are drawn from graspable ranges. Everything is a pure
function of (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import BASE_FRAME, RigidTransform, rotation_z
from .primitives import Box, Composite, Cylinder, PrimitiveObject, Sphere

TABLE_INSTANCE = -2  # internal renderer id; mapped to background in masks
BACKGROUND = -1


class PlacementError(RuntimeError):
    """Could not place all objects without footprint overlap."""


@dataclass
class SceneConfig:
    table_height_range: tuple[float, float] = (0.30, 0.50)
    object_count_range: tuple[int, int] = (4, 5)
    placement_radius: float = 0.20       # disc on the table where objects go
    table_half_extent: float = 0.40      # rendered table top half size
    min_gap: float = 0.015               # clearance between footprints
    kinds: tuple[str, ...] = ("sphere", "box", "cylinder", "composite")
    sphere_radius_range: tuple[float, float] = (0.022, 0.035)
    box_half_range: tuple[float, float] = (0.015, 0.035)   # per horizontal axis
    box_half_height_range: tuple[float, float] = (0.03, 0.07)
    cylinder_radius_range: tuple[float, float] = (0.015, 0.032)
    cylinder_height_range: tuple[float, float] = (0.07, 0.15)
    max_place_tries: int = 200
    gt_cloud_points: int = 2048


@dataclass
class CameraRigConfig:
    n_real_views: int = 5
    arc_degrees: float = 120.0           # real views span this arc on one side
    n_virtual_views: int = 4             # complete the ring to 360 degrees
    radius_range: tuple[float, float] = (0.80, 0.95)
    eye_height_range: tuple[float, float] = (0.90, 1.20)
    image_width: int = 128
    image_height: int = 96
    focal: float = 160.0
    include_virtual: bool = True


@dataclass
class Scene:
    """Table plane plus resting objects; world frame doubles as robot base."""

    table_height: float
    objects: list[PrimitiveObject]
    frame_id: str = BASE_FRAME
    _cloud_cache: dict = field(default_factory=dict, repr=False)

    def instance_ids(self) -> list[int]:
        return [o.instance_id for o in self.objects]

    def object_by_id(self, instance_id: int) -> PrimitiveObject:
        for o in self.objects:
            if o.instance_id == instance_id:
                return o
        raise KeyError(f"unknown instance id {instance_id}")

    def surface_points(self, instance_id: int, n: int = 2048) -> np.ndarray:
        """Deterministic uniform-by-area surface samples, world frame."""
        key = (instance_id, n)
        if key not in self._cloud_cache:
            rng = np.random.default_rng(0xC10D + instance_id * 7919 + n)
            obj = self.object_by_id(instance_id)
            self._cloud_cache[key] = obj.sample_surface_world(n, rng)
        return self._cloud_cache[key]

    def without_object(self, instance_id: int) -> "Scene":
        kept = [o for o in self.objects if o.instance_id != instance_id]
        if len(kept) == len(self.objects):
            raise KeyError(f"unknown instance id {instance_id}")
        return Scene(self.table_height, kept, self.frame_id)


def _resting_pose(shape, x: float, y: float, yaw: float, table_height: float) -> RigidTransform:
    z = table_height - shape.min_z()
    return RigidTransform(rotation_z(yaw), np.array([x, y, z]), "object", BASE_FRAME)


def _draw_shape(kind: str, rng: np.random.Generator, cfg: SceneConfig):
    if kind == "sphere":
        return Sphere(rng.uniform(*cfg.sphere_radius_range))
    if kind == "box":
        hx = rng.uniform(*cfg.box_half_range)
        hy = rng.uniform(*cfg.box_half_range)
        hz = rng.uniform(*cfg.box_half_height_range)
        return Box([hx, hy, hz])
    if kind == "cylinder":
        return Cylinder(rng.uniform(*cfg.cylinder_radius_range),
                        rng.uniform(*cfg.cylinder_height_range))
    if kind == "composite":
        # a two-part stack: post with a cap, all offsets vertical
        base = Cylinder(rng.uniform(*cfg.cylinder_radius_range),
                        rng.uniform(0.05, 0.10))
        cap_r = rng.uniform(*cfg.sphere_radius_range)
        cap = Sphere(cap_r)
        top = base.height / 2 + 0.7 * cap_r
        return Composite([(np.zeros(3), base), (np.array([0.0, 0.0, top]), cap)])
    raise ValueError(f"unknown primitive kind {kind!r}")


def generate_scene(seed: int, config: SceneConfig | None = None) -> Scene:
    """Build a random scene; deterministic for a fixed (seed, config)."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    table_height = rng.uniform(*cfg.table_height_range)
    count = int(rng.integers(cfg.object_count_range[0], cfg.object_count_range[1] + 1))

    objects: list[PrimitiveObject] = []
    placed: list[tuple[float, float, float]] = []  # (x, y, footprint radius)
    for instance_id in range(1, count + 1):
        kind = cfg.kinds[rng.integers(0, len(cfg.kinds))]
        shape = _draw_shape(kind, rng, cfg)
        radius = shape.footprint_radius()
        for attempt in range(cfg.max_place_tries):
            r = cfg.placement_radius * np.sqrt(rng.uniform())
            theta = rng.uniform(0, 2 * np.pi)
            x, y = r * np.cos(theta), r * np.sin(theta)
            ok = all(np.hypot(x - px, y - py) >= radius + pr + cfg.min_gap
                     for px, py, pr in placed)
            if ok:
                break
        else:
            raise PlacementError(
                f"could not place object {instance_id} after {cfg.max_place_tries} tries")
        yaw = rng.uniform(-np.pi, np.pi)
        color = rng.uniform(0.15, 0.95, size=3)
        objects.append(PrimitiveObject(shape, _resting_pose(shape, x, y, yaw, table_height),
                                       instance_id, color))
        placed.append((x, y, radius))
    return Scene(table_height, objects)
