"""Procedural table-top scenes, analytic depth rendering, labels and crops."""

from .primitives import Sphere, Box, Cylinder, Composite, PrimitiveObject
from .scene import Scene, SceneConfig, CameraRigConfig, PlacementError, generate_scene
from .render import Snapshot, SensorNoiseModel, render, camera_ring, ConfigError
from .episode import Episode, generate_episode
from .labels import ObjectViewLabel, CoverageError, make_labels, CropResult, CropError, crop
from .dataset import write_episode_dataset, read_episode_dataset

__all__ = [
    "Sphere", "Box", "Cylinder", "Composite", "PrimitiveObject",
    "Scene", "SceneConfig", "CameraRigConfig", "PlacementError", "generate_scene",
    "Snapshot", "SensorNoiseModel", "render", "camera_ring", "ConfigError",
    "Episode", "generate_episode",
    "ObjectViewLabel", "CoverageError", "make_labels", "CropResult", "CropError", "crop",
    "write_episode_dataset", "read_episode_dataset",
]
