"""Grasp-success critic: a PointNet-style classifier on grasp-frame clouds.

Architecture (identical for both input modes): shared per-point dense layers
3 -> 64 -> 128, max-pool over points, then a head of 128 -> 64 -> 32 -> 16
fully-connected layers with ReLU + BatchNorm, and a final linear layer to one
logit followed by a sigmoid. Max-pooling makes the output exactly invariant
to point order.

Input modes:
  * ``full-cloud``: the predicted full 3D cloud of the target object;
  * ``partial-2.5D``: the single-view masked depth back-projection, padded or
    subsampled to the same K points, so both critics consume identical shapes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .geometry import (BASE_FRAME, EmptyInputError, PointCloud, RigidTransform,
                       camera_frame)
from .grasp import GraspSample, GripperModel, grasp_oracle, heuristic_sample, to_grasp_frame
from .scenesim.episode import Episode
from .scenesim.labels import make_labels, crop
from .shapepred import ShapeNetModel, intrinsics_features

INPUT_MODES = ("full-cloud", "partial-2.5D")


class DataError(RuntimeError):
    """Unusable training data (e.g. a single class)."""


@dataclass
class CriticConfig:
    k_points: int = 256
    point_channels: tuple[int, int] = (64, 128)
    head_widths: tuple[int, int, int] = (64, 32, 16)
    input_mode: str = "full-cloud"

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")


class CriticModel:
    """Point-branch + pooled head; BatchNorm runs in batch or running mode."""

    def __init__(self, config: CriticConfig, seed: int = 0):
        self.config = config
        self.params = ad.ParamSet()
        self.bn_states: list[ad.BatchNormState] = []
        rng = np.random.default_rng(seed)

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        p = self.params
        c1, c2 = config.point_channels
        p.add("pt1.w", he((3, c1), 3))
        p.add("pt1.b", np.zeros(c1))
        p.add("pt2.w", he((c1, c2), c1))
        p.add("pt2.b", np.zeros(c2))
        widths = (c2,) + config.head_widths
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            p.add(f"head{i}.w", he((w_in, w_out), w_in))
            p.add(f"head{i}.b", np.zeros(w_out))
            p.add(f"head{i}.gamma", np.ones(w_out))
            p.add(f"head{i}.beta", np.zeros(w_out))
            self.bn_states.append(ad.BatchNormState(w_out))
        p.add("out.w", he((widths[-1], 1), widths[-1]))
        p.add("out.b", np.zeros(1))

    def logits(self, clouds: np.ndarray, mode: str) -> ad.Tensor:
        """(B, K, 3) grasp-frame clouds -> (B, 1) raw logits."""
        if clouds.ndim != 3 or clouds.shape[2] != 3:
            raise ad.ShapeError(f"expected (B, K, 3) clouds, got {clouds.shape}")
        b, k, _ = clouds.shape
        if k == 0:
            raise EmptyInputError("critic input cloud is empty")
        p = self.params
        x = ad.reshape(ad.Tensor(clouds), (b * k, 3))
        x = ad.relu(ad.dense(x, p["pt1.w"], p["pt1.b"]))
        x = ad.relu(ad.dense(x, p["pt2.w"], p["pt2.b"]))
        x = ad.reshape(x, (b, k, self.config.point_channels[1]))
        x = ad.maxpool_points(x, axis=1)
        for i, st in enumerate(self.bn_states, start=1):
            x = ad.dense(x, p[f"head{i}.w"], p[f"head{i}.b"])
            x = ad.batchnorm(ad.relu(x), p[f"head{i}.gamma"], p[f"head{i}.beta"],
                             st, mode)
        return ad.dense(x, p["out.w"], p["out.b"])

    def save(self, path: str):
        for i, st in enumerate(self.bn_states, start=1):
            self.params.buffers.pop(f"head{i}.running_mean", None)
            self.params.buffers.pop(f"head{i}.running_var", None)
            self.params.add_buffer(f"head{i}.running_mean", st.running_mean)
            self.params.add_buffer(f"head{i}.running_var", st.running_var)
        ad.save_params(self.params, path)
        with open(path + ".json", "w") as f:
            json.dump(asdict(self.config), f, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "CriticModel":
        with open(path + ".json") as f:
            raw = json.load(f)
        raw["point_channels"] = tuple(raw["point_channels"])
        raw["head_widths"] = tuple(raw["head_widths"])
        model = cls(CriticConfig(**raw), seed=0)
        values = ad.load_params(path)
        model.params.load_values({k: v for k, v in values.items()
                                  if k in model.params.params})
        for i, st in enumerate(model.bn_states, start=1):
            st.running_mean = values[f"head{i}.running_mean"]
            st.running_var = values[f"head{i}.running_var"]
        return model


def critic_forward(model: CriticModel, cloud: PointCloud | np.ndarray) -> float:
    """Success probability for one grasp-frame cloud (inference mode)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    logits = model.logits(pts[None], mode="infer")
    return float(1.0 / (1.0 + np.exp(-logits.values[0, 0])))


def pad_or_subsample(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Resize a point set to exactly k points (deterministic)."""
    n = len(points)
    if n == 0:
        raise EmptyInputError("empty point set")
    rng = np.random.default_rng(seed)
    if n >= k:
        idx = rng.choice(n, size=k, replace=False)
    else:
        idx = np.concatenate([np.arange(n), rng.choice(n, size=k - n, replace=True)])
    return points[np.sort(idx)]


# ---------------------------------------------------------------- records

@dataclass
class GraspEpisodeRecord:
    """One labeled grasp attempt with both candidate input clouds."""

    episode_seed: int
    instance_id: int
    view_index: int
    cloud: np.ndarray           # (K, 3) predicted/oracle full cloud, camera frame
    partial_cloud: np.ndarray   # (K, 3) masked 2.5D back-projection, camera frame
    sample: GraspSample
    cam_to_base: RigidTransform
    success: int

    def input_cloud(self, mode: str) -> np.ndarray:
        if mode == "full-cloud":
            return self.cloud
        if mode == "partial-2.5D":
            return self.partial_cloud
        raise ValueError(f"unknown input mode {mode!r}")


@dataclass
class GraspDataConfig:
    samples_per_object: int = 10
    position_sigma: float = 0.02
    crop_margin: float = 0.25
    gripper: GripperModel = field(default_factory=GripperModel)
    seed: int = 0


def best_view(episode: Episode, labels, instance_id: int) -> int:
    """Deterministic source view: the one with the largest mask."""
    labs = labels[instance_id]
    return max(labs, key=lambda l: (l.mask_pixel_count, -l.view_index)).view_index


def gen_grasp_dataset(episodes: list[Episode], shape_model: ShapeNetModel | None,
                      config: GraspDataConfig | None = None,
                      oracle_clouds: bool = False) -> list[GraspEpisodeRecord]:
    """Label heuristic grasp samples with the geometric oracle.

    With `oracle_clouds` (or no shape model) the ground-truth surface cloud
    stands in for the prediction. Per-record seeds derive from
    (config seed, episode seed, instance, sample index), so generation can be
    parallelized per episode with identical results.
    """
    cfg = config or GraspDataConfig()
    if shape_model is None:
        oracle_clouds = True
    k = shape_model.config.k_points if shape_model is not None else 256
    records: list[GraspEpisodeRecord] = []
    for ep in episodes:
        labels = make_labels(ep)
        for obj in ep.scene.objects:
            iid = obj.instance_id
            view = best_view(ep, labels, iid)
            snap = ep.snapshots[view]
            cam_to_base = snap.camera_pose.inverse()
            lab = next(l for l in labels[iid] if l.view_index == view)
            partial = pad_or_subsample(lab.partial_cloud.points, k,
                                       seed=ep.seed * 31 + iid)
            if oracle_clouds:
                full = pad_or_subsample(ep.gt_cloud_in_camera(iid, view).points, k,
                                        seed=ep.seed * 37 + iid)
            else:
                cr = crop(snap, lab.bbox, iid, margin=cfg.crop_margin,
                          out_size=shape_model.config.crop_size)
                feats = intrinsics_features(cr.intrinsics, cr.window, snap.intrinsics)
                full = shape_model.forward(cr.image[None], feats[None]).values[0]
            cloud_base = PointCloud(cam_to_base.apply(full), BASE_FRAME)
            for j in range(cfg.samples_per_object):
                rng = np.random.default_rng(
                    [cfg.seed, ep.seed, iid, j])  # stable per-record seed
                s = heuristic_sample(cloud_base, rng, sigma=cfg.position_sigma)
                ok = grasp_oracle(ep.scene, iid, s, cfg.gripper)
                records.append(GraspEpisodeRecord(
                    episode_seed=ep.seed, instance_id=iid, view_index=view,
                    cloud=full, partial_cloud=partial, sample=s,
                    cam_to_base=cam_to_base, success=int(ok)))
    return records


def class_balance(records: list[GraspEpisodeRecord]) -> float:
    return float(np.mean([r.success for r in records])) if records else 0.0


# ---------------------------------------------------------------- training

@dataclass
class CriticTrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    input_mode: str = "full-cloud"
    seed: int = 0
    val_fraction: float = 0.15


def grasp_frame_inputs(records: list[GraspEpisodeRecord], mode: str,
                       seed: int) -> np.ndarray:
    """Stack record clouds transformed into their grasp frames, shuffled."""
    out = np.empty((len(records), records[0].cloud.shape[0], 3))
    for i, r in enumerate(records):
        rng = np.random.default_rng(seed + i)
        cloud = PointCloud(r.input_cloud(mode), r.cam_to_base.from_frame)
        out[i] = to_grasp_frame(cloud, r.sample, r.cam_to_base, rng=rng).points
    return out


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC (probability a positive outranks a negative)."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return float("nan")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def train_critic(records: list[GraspEpisodeRecord],
                 config: CriticTrainConfig | None = None,
                 critic_cfg: CriticConfig | None = None
                 ) -> tuple[CriticModel, list[dict]]:
    """Binary cross-entropy training by Adam; deterministic for fixed seed."""
    cfg = config or CriticTrainConfig()
    labels_all = np.array([r.success for r in records], dtype=np.float64)
    if len(np.unique(labels_all)) < 2:
        raise DataError("training records contain a single class")
    critic_cfg = critic_cfg or CriticConfig(
        k_points=records[0].cloud.shape[0], input_mode=cfg.input_mode)
    model = CriticModel(critic_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)

    clouds = grasp_frame_inputs(records, cfg.input_mode, seed=cfg.seed * 1000 + 7)
    n = len(records)
    n_val = int(n * cfg.val_fraction)
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(np.unique(labels_all[train_idx])) < 2:
        raise DataError("train split collapsed to a single class")

    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_idx))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = train_idx[order[start:start + cfg.batch_size]]
            if len(idx) < 2:
                continue  # BatchNorm in train mode needs a real batch
            batch = clouds[idx]
            target = labels_all[idx].reshape(-1, 1)
            with ad.Tape() as tape:
                logits = model.logits(batch, mode="train")
                loss = ad.bce_with_logits(logits, ad.Tensor(target))
            ad.backward(tape, loss)
            ad.adam_step(model.params, cfg.learning_rate)
            losses.append(float(loss.values))
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if len(val_idx):
            scores = model.logits(clouds[val_idx], mode="infer").values[:, 0]
            entry["val_auc"] = auc_score(scores, labels_all[val_idx])
            entry["val_acc"] = float(np.mean((scores > 0) == labels_all[val_idx]))
        log.append(entry)
    return model, log
