"""Flat key-value experiment configuration with section prefixes.

Files look like::

    # comment
    seed = 7
    scene.table_height_min = 0.30
    shape.view_regime = full

Every key has a documented default (see DEFAULTS / configs/default.cfg at the
repo root); values are typed by their default. The fully resolved config and
its hash are embedded in every output artifact.
"""

from __future__ import annotations

import hashlib
import os

from ..cem import CemConfig
from ..critic import CriticTrainConfig, GraspDataConfig, CriticConfig
from ..grasp import GripperModel
from ..scenesim.render import SensorNoiseModel
from ..scenesim.scene import CameraRigConfig, SceneConfig
from ..shapepred import ShapeLossWeights, ShapeModelConfig, ShapeTrainConfig

DATA_ROOT_ENV = "CLOUDGRASP_DATA_ROOT"


class ValidationError(ValueError):
    """Config value rejected; the message names the offending field."""


DEFAULTS: dict[str, object] = {
    "seed": 0,
    # scene generation
    "scene.table_height_min": 0.30,
    "scene.table_height_max": 0.50,
    "scene.objects_min": 4,
    "scene.objects_max": 5,
    "scene.placement_radius": 0.20,
    "scene.min_gap": 0.015,
    # camera rig (desk scale: 96x128 frames; paper scale would be 512x640)
    "rig.image_width": 128,
    "rig.image_height": 96,
    "rig.focal": 160.0,
    "rig.views_real": 5,
    "rig.views_virtual": 4,
    "rig.include_virtual": True,
    "rig.arc_degrees": 120.0,
    # observation noise (domain-shift experiments)
    "noise.sigma": 0.0,
    "noise.hole_prob": 0.0,
    "noise.quantization": 0.0,
    # fraction of generated episodes rendered with the noise model: the
    # desk-scale stand-in for mixing real-sensor episodes into shape training
    "data.noisy_fraction": 0.0,
    # shape prediction network + training
    "shape.k_points": 256,
    "shape.crop_height": 48,
    "shape.crop_width": 64,
    "shape.epochs": 32,
    "shape.batch_size": 16,
    "shape.learning_rate": 2e-3,
    "shape.view_regime": "full",
    "shape.lambda_bbox": 1.0,
    "shape.lambda_mask": 1.0,
    "shape.lambda_reg": 1e-4,
    "shape.huber_delta": 1.0,
    "shape.chamfer3d_weight": 1.0,
    "shape.clamp_z_min": 0.05,
    "shape.clamp_weight": 1.0,
    "shape.mask_samples": 128,
    "shape.cloud_samples": 128,
    "shape.crop_margin": 0.25,
    # grasp data generation
    "graspdata.samples_per_object": 10,
    "graspdata.position_sigma": 0.02,
    # gripper
    "gripper.jaw_width": 0.08,
    "gripper.finger_length": 0.05,
    "gripper.finger_thickness": 0.01,
    "gripper.finger_width": 0.02,
    "gripper.pre_grasp_height": 0.10,
    # critic training
    "critic.epochs": 40,
    "critic.batch_size": 64,
    "critic.learning_rate": 1e-3,
    "critic.input_mode": "full-cloud",
    # CEM policy search
    "cem.n_samples": 100,
    "cem.n_elite": 10,
    "cem.alpha": 0.9,
    "cem.max_iters": 3,
    "cem.init_sigma_xy": 0.05,
    "cem.init_sigma_z": 0.03,
    "cem.init_sigma_yaw": 0.5,
    # evaluation
    "eval.trials": 100,
    "eval.episodes": 25,
    "ablate.episodes": 200,
    "ablate.epochs": 32,
    "ablate.regimes": "1,2,4,full",
}


def _parse_value(key: str, raw: str, default) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(
            f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


class ExperimentConfig:
    """Resolved configuration: defaults < config file < flag overrides."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise ValidationError(f"unknown config key {k!r}")
                self.values[k] = v
        self._validate()

    @classmethod
    def load(cls, path: str | None = None,
             overrides: dict[str, object] | None = None) -> "ExperimentConfig":
        values: dict[str, object] = {}
        if path:
            if not os.path.exists(path):
                raise FileNotFoundError(f"config file {path} not found")
            with open(path) as f:
                for lineno, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    if "=" not in line:
                        raise ValidationError(f"{path}:{lineno}: expected key = value")
                    key, raw = (part.strip() for part in line.split("=", 1))
                    if key not in DEFAULTS:
                        raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
                    values[key] = _parse_value(key, raw, DEFAULTS[key])
        if overrides:
            for k, v in overrides.items():
                if k not in DEFAULTS:
                    raise ValidationError(f"unknown config key {k!r}")
                values[k] = _parse_value(k, str(v), DEFAULTS[k]) \
                    if isinstance(v, str) else v
        return cls(values)

    def _validate(self):
        v = self.values
        if not v["scene.table_height_min"] <= v["scene.table_height_max"]:
            raise ValidationError("scene.table_height_min must be <= max")
        if not 1 <= v["scene.objects_min"] <= v["scene.objects_max"]:
            raise ValidationError("scene.objects_min must be in [1, objects_max]")
        if v["critic.input_mode"] not in ("full-cloud", "partial-2.5D"):
            raise ValidationError("critic.input_mode must be full-cloud or partial-2.5D")
        if not 0 < v["cem.alpha"] < 1:
            raise ValidationError("cem.alpha must be in (0, 1)")
        if v["shape.view_regime"] not in ("1", "2", "4", "full"):
            raise ValidationError("shape.view_regime must be one of 1, 2, 4, full")
        if v["noise.sigma"] < 0 or not 0 <= v["noise.hole_prob"] <= 1:
            raise ValidationError("noise.sigma must be >= 0, noise.hole_prob in [0, 1]")

    def __getitem__(self, key: str):
        return self.values[key]

    def canonical_text(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    # ------------------------------------------------ typed sub-configs

    def scene_config(self) -> SceneConfig:
        v = self.values
        return SceneConfig(
            table_height_range=(v["scene.table_height_min"], v["scene.table_height_max"]),
            object_count_range=(v["scene.objects_min"], v["scene.objects_max"]),
            placement_radius=v["scene.placement_radius"],
            min_gap=v["scene.min_gap"],
        )

    def rig_config(self) -> CameraRigConfig:
        v = self.values
        return CameraRigConfig(
            n_real_views=v["rig.views_real"],
            arc_degrees=v["rig.arc_degrees"],
            n_virtual_views=v["rig.views_virtual"],
            include_virtual=v["rig.include_virtual"],
            image_width=v["rig.image_width"],
            image_height=v["rig.image_height"],
            focal=v["rig.focal"],
        )

    def noise_model(self) -> SensorNoiseModel | None:
        v = self.values
        m = SensorNoiseModel(v["noise.sigma"], v["noise.hole_prob"], v["noise.quantization"])
        return None if m.is_zero() else m

    def episode_noise(self, index: int) -> SensorNoiseModel | None:
        """Noise model for the index-th generated episode under the mixed-domain
        scheme: a `data.noisy_fraction` share of episodes, evenly spread."""
        frac = self.values["data.noisy_fraction"]
        if frac <= 0:
            return None
        import math
        if math.floor((index + 1) * frac) - math.floor(index * frac) >= 1:
            return self.noise_model()
        return None

    def loss_weights(self) -> ShapeLossWeights:
        v = self.values
        return ShapeLossWeights(
            bbox=v["shape.lambda_bbox"], mask=v["shape.lambda_mask"],
            reg=v["shape.lambda_reg"], huber_delta=v["shape.huber_delta"],
            chamfer3d_weight=v["shape.chamfer3d_weight"],
            clamp_z_min=v["shape.clamp_z_min"], clamp_weight=v["shape.clamp_weight"],
        )

    def shape_model_config(self) -> ShapeModelConfig:
        v = self.values
        return ShapeModelConfig(
            k_points=v["shape.k_points"],
            crop_size=(v["shape.crop_height"], v["shape.crop_width"]),
        )

    def shape_train_config(self, view_regime: str | None = None,
                           log_path: str | None = None) -> ShapeTrainConfig:
        v = self.values
        return ShapeTrainConfig(
            epochs=v["shape.epochs"], batch_size=v["shape.batch_size"],
            learning_rate=v["shape.learning_rate"],
            view_regime=view_regime or v["shape.view_regime"],
            weights=self.loss_weights(),
            mask_samples=v["shape.mask_samples"], cloud_samples=v["shape.cloud_samples"],
            seed=v["seed"], margin=v["shape.crop_margin"], log_path=log_path,
        )

    def gripper(self) -> GripperModel:
        v = self.values
        return GripperModel(
            jaw_width=v["gripper.jaw_width"], finger_length=v["gripper.finger_length"],
            finger_thickness=v["gripper.finger_thickness"],
            finger_width=v["gripper.finger_width"],
            pre_grasp_height=v["gripper.pre_grasp_height"],
        )

    def grasp_data_config(self) -> GraspDataConfig:
        v = self.values
        return GraspDataConfig(
            samples_per_object=v["graspdata.samples_per_object"],
            position_sigma=v["graspdata.position_sigma"],
            crop_margin=v["shape.crop_margin"],
            gripper=self.gripper(), seed=v["seed"],
        )

    def critic_train_config(self, input_mode: str | None = None) -> CriticTrainConfig:
        v = self.values
        return CriticTrainConfig(
            epochs=v["critic.epochs"], batch_size=v["critic.batch_size"],
            learning_rate=v["critic.learning_rate"],
            input_mode=input_mode or v["critic.input_mode"], seed=v["seed"],
        )

    def cem_config(self) -> CemConfig:
        v = self.values
        return CemConfig(
            n_samples=v["cem.n_samples"], n_elite=v["cem.n_elite"],
            alpha=v["cem.alpha"], max_iters=v["cem.max_iters"],
            init_sigma=(v["cem.init_sigma_xy"], v["cem.init_sigma_xy"],
                        v["cem.init_sigma_z"], v["cem.init_sigma_yaw"]),
        )


def data_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, ".")
