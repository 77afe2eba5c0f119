"""Point-cloud prediction network and its self-supervised multi-view loss.

The network maps a 5-channel RGBD-Mask crop plus crop-adapted intrinsics to a
K-point 3D cloud in the source view's camera frame, at real-world scale.
Training minimizes, over every supervision view of the object, a Huber loss
between predicted and labeled bounding boxes plus a projected-points term:
a symmetric 2D chamfer against mask-interior pixels and a one-sided 3D
chamfer from the labeled partial cloud to the prediction (label -> prediction
only, since the prediction legitimately contains occluded points).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .geometry import (CameraIntrinsics, PointCloud, RigidTransform, camera_frame,
                       iou as box_iou, tight_bbox, Projection2D, BBox2D)
from .scenesim.episode import Episode
from .scenesim.labels import ObjectViewLabel, crop, make_labels


class DataError(RuntimeError):
    """Dataset unusable for the requested training run."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the last good parameters."""

    def __init__(self, message: str, last_good: dict[str, np.ndarray]):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class ShapeLossWeights:
    bbox: float = 1.0            # lambda_B
    mask: float = 1.0            # lambda_M
    reg: float = 1e-4            # lambda_theta (L2 squared)
    huber_delta: float = 1.0
    chamfer3d_weight: float = 1.0  # weight of the 3D anchor inside the mask term
    clamp_z_min: float = 0.05
    clamp_weight: float = 1.0

    def __post_init__(self):
        if min(self.bbox, self.mask, self.reg) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ShapeModelConfig:
    k_points: int = 256
    crop_size: tuple[int, int] = (48, 64)      # (height, width)
    conv_channels: tuple[int, int, int] = (8, 16, 32)
    latent_dim: int = 128
    intrinsics_dim: int = 32
    decoder_hidden: int = 256
    seed_grid_depth: float = 0.6               # meters in front of the camera
    seed_grid_half: float = 0.10


def _seed_grid(k: int, depth: float, half: float) -> np.ndarray:
    """K-point lattice centered `depth` meters in front of the camera."""
    n = max(2, round(k ** (1 / 3)))
    while n ** 2 * math.ceil(k / n ** 2) < k:
        n += 1
    nz = math.ceil(k / n ** 2)
    xs = np.linspace(-half, half, n)
    ys = np.linspace(-half, half, n)
    zs = np.linspace(depth - half / 2, depth + half / 2, nz)
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[:k]


class ShapeNetModel:
    """Conv encoder on the crop, intrinsics conditioning, dense cloud decoder."""

    def __init__(self, config: ShapeModelConfig, seed: int = 0):
        self.config = config
        self.params = ad.ParamSet()
        rng = np.random.default_rng(seed)
        c1, c2, c3 = config.conv_channels
        h, w = config.crop_size
        self._flat = (h // 8) * (w // 8) * c3

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        p = self.params
        p.add("enc.conv1.w", he((c1, 5, 3, 3), 5 * 9))
        p.add("enc.conv1.b", np.zeros(c1))
        p.add("enc.conv2.w", he((c2, c1, 3, 3), c1 * 9))
        p.add("enc.conv2.b", np.zeros(c2))
        p.add("enc.conv3.w", he((c3, c2, 3, 3), c2 * 9))
        p.add("enc.conv3.b", np.zeros(c3))
        p.add("enc.fc.w", he((self._flat, config.latent_dim), self._flat))
        p.add("enc.fc.b", np.zeros(config.latent_dim))
        p.add("intr.fc.w", he((8, config.intrinsics_dim), 8))
        p.add("intr.fc.b", np.zeros(config.intrinsics_dim))
        d_in = config.latent_dim + config.intrinsics_dim
        p.add("dec.fc1.w", he((d_in, config.decoder_hidden), d_in))
        p.add("dec.fc1.b", np.zeros(config.decoder_hidden))
        # zero weights + seed-grid bias: the untrained net emits a sane cloud
        p.add("dec.out.w", np.zeros((config.decoder_hidden, config.k_points * 3)))
        p.add("dec.out.b", _seed_grid(config.k_points, config.seed_grid_depth,
                                      config.seed_grid_half).reshape(-1))

    def forward(self, crops: np.ndarray, intr_feats: np.ndarray) -> ad.Tensor:
        """Batched forward: crops (N,5,h,w), intr_feats (N,8) -> (N, K, 3)."""
        p = self.params
        n = crops.shape[0]
        x = ad.Tensor(crops)
        x = ad.relu(ad.conv2d(x, p["enc.conv1.w"], p["enc.conv1.b"], stride=2, padding=1))
        x = ad.relu(ad.conv2d(x, p["enc.conv2.w"], p["enc.conv2.b"], stride=2, padding=1))
        x = ad.relu(ad.conv2d(x, p["enc.conv3.w"], p["enc.conv3.b"], stride=2, padding=1))
        x = ad.reshape(x, (n, self._flat))
        latent = ad.relu(ad.dense(x, p["enc.fc.w"], p["enc.fc.b"]))
        cond = ad.relu(ad.dense(ad.Tensor(intr_feats), p["intr.fc.w"], p["intr.fc.b"]))
        z = ad.concat([latent, cond], axis=1)
        z = ad.relu(ad.dense(z, p["dec.fc1.w"], p["dec.fc1.b"]))
        out = ad.dense(z, p["dec.out.w"], p["dec.out.b"])
        return ad.reshape(out, (n, self.config.k_points, 3))

    def save(self, path: str):
        ad.save_params(self.params, path)
        with open(path + ".json", "w") as f:
            json.dump(asdict(self.config), f, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "ShapeNetModel":
        with open(path + ".json") as f:
            raw = json.load(f)
        raw["crop_size"] = tuple(raw["crop_size"])
        raw["conv_channels"] = tuple(raw["conv_channels"])
        model = cls(ShapeModelConfig(**raw), seed=0)
        values = ad.load_params(path)
        model.params.load_values({k: v for k, v in values.items()
                                  if k in model.params.params})
        return model


def intrinsics_features(adapted: CameraIntrinsics, window: tuple[int, int, int, int],
                        full: CameraIntrinsics) -> np.ndarray:
    """Normalized conditioning vector: adapted intrinsics + crop window."""
    u0, v0, u1, v1 = window
    return np.array([
        adapted.fx / 1000.0, adapted.fy / 1000.0,
        adapted.cx / adapted.width, adapted.cy / adapted.height,
        u0 / full.width, v0 / full.height,
        (u1 - u0 + 1) / full.width, (v1 - v0 + 1) / full.height,
    ])


def predict_cloud(model: ShapeNetModel, crop_image: np.ndarray,
                  intr_feats: np.ndarray, frame_id: str) -> PointCloud:
    """Single-crop inference; returns the cloud in the source camera frame."""
    h, w = model.config.crop_size
    if crop_image.shape != (5, h, w):
        raise ad.ShapeError(f"crop must be (5,{h},{w}), got {crop_image.shape}")
    out = model.forward(crop_image[None], intr_feats[None])
    return PointCloud(out.values[0], frame_id)


@dataclass
class ViewSupervision:
    """Constants needed to supervise a prediction in one view."""

    rotation: np.ndarray          # source cam -> view cam
    translation: np.ndarray
    intrinsics: CameraIntrinsics
    bbox: np.ndarray              # (4,) [u_mid, v_mid, w, h]
    mask_pixels: np.ndarray       # (S, 2) sample of mask interior
    partial_cloud: np.ndarray     # (L, 3) labeled partial cloud, view frame


def supervision_from_labels(episode: Episode, labels: dict[int, list[ObjectViewLabel]],
                            instance_id: int, source_view: int, view_indices: list[int],
                            mask_samples: int = 256, cloud_samples: int = 256
                            ) -> list[ViewSupervision]:
    sups = []
    by_view = {l.view_index: l for l in labels[instance_id]}
    for v in view_indices:
        lab = by_view[v]
        rel = episode.relative_pose(source_view, v)
        sups.append(ViewSupervision(
            rotation=rel.rotation, translation=rel.translation,
            intrinsics=episode.snapshots[v].intrinsics,
            bbox=lab.bbox.as_array(),
            mask_pixels=lab.sample_mask_pixels(mask_samples, seed=instance_id * 131 + v),
            partial_cloud=lab.sample_partial_cloud(cloud_samples,
                                                   seed=instance_id * 137 + v),
        ))
    return sups


def _chamfer_terms(pred_uv: ad.Tensor, mask_px: np.ndarray,
                   pred_pts: ad.Tensor, label_pts: np.ndarray,
                   w3d: float) -> ad.Tensor:
    """Symmetric 2D chamfer (pixels) + one-sided 3D chamfer (label->pred)."""
    d = ad.pairwise_dist(pred_uv, ad.Tensor(mask_px))
    chamfer2d = ad.add(ad.mean(ad.reduce_min(d, axis=1)),
                       ad.mean(ad.reduce_min(d, axis=0)))
    d3 = ad.pairwise_dist(ad.Tensor(label_pts), pred_pts)
    chamfer3d = ad.mean(ad.reduce_min(d3, axis=1))
    return ad.add(chamfer2d, ad.mul(chamfer3d, w3d))


def shape_loss(predicted: ad.Tensor, supervisions: list[ViewSupervision],
               weights: ShapeLossWeights, params: ad.ParamSet | None) -> ad.Tensor:
    """Differentiable multi-view loss for one predicted cloud (K, 3).

    Points behind a camera never crash training: depth is clamped at
    `clamp_z_min` inside the projection, with a smooth quadratic penalty
    pushing such points back in front.
    """
    total = ad.Tensor(0.0)
    for sup in supervisions:
        pts = ad.add(ad.matmul(predicted, sup.rotation.T), sup.translation.reshape(1, 3))
        x = ad.narrow(pts, 1, 0, 1)
        y = ad.narrow(pts, 1, 1, 1)
        z = ad.narrow(pts, 1, 2, 1)
        zc = ad.clamp_min(z, weights.clamp_z_min)
        behind = ad.relu(ad.sub(weights.clamp_z_min, z))
        penalty = ad.sum_(ad.mul(behind, behind))
        intr = sup.intrinsics
        u = ad.add(ad.mul(ad.div(x, zc), intr.fx), intr.cx)
        v = ad.add(ad.mul(ad.div(y, zc), intr.fy), intr.cy)
        uv = ad.concat([u, v], axis=1)

        u_min = ad.reduce_min(u, axis=0, keepdims=True)
        u_max = ad.reduce_max(u, axis=0, keepdims=True)
        v_min = ad.reduce_min(v, axis=0, keepdims=True)
        v_max = ad.reduce_max(v, axis=0, keepdims=True)
        bbox_pred = ad.concat([
            ad.mul(ad.add(u_min, u_max), 0.5), ad.mul(ad.add(v_min, v_max), 0.5),
            ad.sub(u_max, u_min), ad.sub(v_max, v_min)], axis=1)
        bbox_term = ad.huber(bbox_pred, sup.bbox.reshape(1, 4), weights.huber_delta)

        mask_term = _chamfer_terms(uv, sup.mask_pixels, pts, sup.partial_cloud,
                                   weights.chamfer3d_weight)
        view_loss = ad.add(ad.add(ad.mul(bbox_term, weights.bbox),
                                  ad.mul(mask_term, weights.mask)),
                           ad.mul(penalty, weights.clamp_weight))
        total = ad.add(total, view_loss)

    if params is not None and weights.reg > 0:
        reg = ad.Tensor(0.0)
        for t in params.params.values():
            flat = ad.reshape(t, (t.values.size,))
            reg = ad.add(reg, ad.sum_(ad.mul(flat, flat)))
        total = ad.add(total, ad.mul(reg, weights.reg))
    return total


# --------------------------------------------------------------------- training

@dataclass
class ShapeTrainConfig:
    epochs: int = 32
    batch_size: int = 16
    learning_rate: float = 2e-3
    lr_decay: float = 0.3             # step decay factor
    lr_decay_at: tuple[float, float] = (0.7, 0.9)  # epoch fractions
    view_regime: str = "4"            # one of {"1", "2", "4", "full"}
    weights: ShapeLossWeights = field(default_factory=ShapeLossWeights)
    mask_samples: int = 128
    cloud_samples: int = 128
    seed: int = 0
    margin: float = 0.25
    val_fraction: float = 0.1
    val_every: int = 4                # validation IOU every n-th epoch
    sources_per_epoch: int = 1        # crops per object per epoch; 0 = all
    log_path: str | None = None

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for frac in self.lr_decay_at:
            if epoch >= int(frac * self.epochs):
                lr *= self.lr_decay
        return lr


def regime_views(visible: list[int], regime: str) -> list[int]:
    """Deterministic evenly spread choice of supervision views."""
    if regime == "full":
        return list(visible)
    r = int(regime)
    if r >= len(visible):
        return list(visible)
    idx = np.round(np.linspace(0, len(visible) - 1, r)).astype(int)
    return [visible[i] for i in sorted(set(idx.tolist()))]


@dataclass
class _Sample:
    episode_idx: int
    instance_id: int
    source_view: int
    crop_image: np.ndarray
    intr_feats: np.ndarray
    supervisions: list[ViewSupervision]


def build_samples(episodes: list[Episode], config: ShapeTrainConfig,
                  model_cfg: ShapeModelConfig) -> list[_Sample]:
    samples = []
    for ei, ep in enumerate(episodes):
        labels = make_labels(ep)
        for obj in ep.scene.objects:
            visible = [l.view_index for l in labels[obj.instance_id]]
            sup_views = regime_views(visible, config.view_regime)
            by_view = {l.view_index: l for l in labels[obj.instance_id]}
            for src in sup_views:
                lab = by_view[src]
                cr = crop(ep.snapshots[src], lab.bbox, obj.instance_id,
                          margin=config.margin, out_size=model_cfg.crop_size)
                feats = intrinsics_features(cr.intrinsics, cr.window,
                                            ep.snapshots[src].intrinsics)
                sups = supervision_from_labels(
                    ep, labels, obj.instance_id, src, sup_views,
                    config.mask_samples, config.cloud_samples)
                samples.append(_Sample(ei, obj.instance_id, src,
                                       cr.image, feats, sups))
    if not samples:
        raise DataError("no trainable samples in dataset")
    return samples


def train_shape(episodes: list[Episode], config: ShapeTrainConfig,
                model_cfg: ShapeModelConfig | None = None
                ) -> tuple[ShapeNetModel, list[dict]]:
    """Train the predictor; deterministic for a fixed seed. Returns (model, log)."""
    if not episodes:
        raise DataError("empty dataset")
    model_cfg = model_cfg or ShapeModelConfig()
    model = ShapeNetModel(model_cfg, seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)

    n_val_ep = max(1, int(len(episodes) * config.val_fraction)) if len(episodes) > 1 else 0
    train_eps = episodes[:len(episodes) - n_val_ep] if n_val_ep else episodes
    val_eps = episodes[len(episodes) - n_val_ep:] if n_val_ep else []

    samples = build_samples(train_eps, config, model_cfg)
    # one rotating source view per object per epoch keeps epochs cheap
    by_obj: dict[tuple[int, int], list[_Sample]] = {}
    for s in samples:
        by_obj.setdefault((s.episode_idx, s.instance_id), []).append(s)

    log: list[dict] = []
    last_good = model.params.clone_values()
    for epoch in range(config.epochs):
        epoch_samples = []
        for group in by_obj.values():
            take = len(group) if config.sources_per_epoch <= 0 \
                else min(config.sources_per_epoch, len(group))
            epoch_samples.extend(group[(epoch + j) % len(group)]
                                 for j in range(take))
        order = rng.permutation(len(epoch_samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [epoch_samples[i] for i in order[start:start + config.batch_size]]
            crops = np.stack([b.crop_image for b in batch])
            feats = np.stack([b.intr_feats for b in batch])
            with ad.Tape() as tape:
                preds = model.forward(crops, feats)
                loss = ad.Tensor(0.0)
                for bi, b in enumerate(batch):
                    cloud = ad.reshape(ad.narrow(preds, 0, bi, 1),
                                       (model_cfg.k_points, 3))
                    loss = ad.add(loss, shape_loss(cloud, b.supervisions,
                                                   config.weights, None))
                loss = ad.mul(loss, 1.0 / len(batch))
                if config.weights.reg > 0:
                    reg = ad.Tensor(0.0)
                    for t in model.params.params.values():
                        flat = ad.reshape(t, (t.values.size,))
                        reg = ad.add(reg, ad.sum_(ad.mul(flat, flat)))
                    loss = ad.add(loss, ad.mul(reg, config.weights.reg))
            if not np.isfinite(loss.values):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", last_good)
            ad.backward(tape, loss)
            ad.adam_step(model.params, config.lr_at(epoch))
            losses.append(float(loss.values))
        last_good = model.params.clone_values()
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if val_eps and (epoch % config.val_every == 0 or epoch == config.epochs - 1):
            entry["val_bbox_iou"] = eval_shape_iou(model, val_eps,
                                                   regime=config.view_regime,
                                                   margin=config.margin)["bbox_iou"]
        log.append(entry)
        if config.log_path:
            with open(config.log_path, "a") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    return model, log


# ------------------------------------------------------------------- evaluation

def splat_iou(uv: np.ndarray, mask: np.ndarray, instance_id: int) -> float:
    """Mask-level IOU: predicted points rasterized with a 1-px splat."""
    h, w = mask.shape
    splat = np.zeros((h, w), dtype=bool)
    ui = np.round(uv[:, 0]).astype(int)
    vi = np.round(uv[:, 1]).astype(int)
    ok = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    splat[vi[ok], ui[ok]] = True
    gt = mask == instance_id
    union = np.logical_or(splat, gt).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(splat, gt).sum() / union)


def project_clamped(points: np.ndarray, intr: CameraIntrinsics,
                    z_min: float = 1e-3) -> np.ndarray:
    """Projection for evaluation: clamps z so degenerate points score poorly."""
    z = np.maximum(points[:, 2], z_min)
    u = intr.fx * points[:, 0] / z + intr.cx
    v = intr.fy * points[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1)


def eval_shape_iou(model: ShapeNetModel, episodes: list[Episode],
                   regime: str = "full", margin: float = 0.25,
                   predictor=None, dst_regime: str = "full") -> dict:
    """Mean bbox IOU (primary) and splat-mask IOU (secondary) over
    (source view, target view) pairs of every object.

    `regime` picks the prediction source views, `dst_regime` the projection
    target views (both via the deterministic spread used in training).
    `predictor`, when given, substitutes the network: a callable
    (episode, instance_id, source_view, crop_result) -> (K, 3) points in the
    source camera frame. Used by oracle-substitution tests.
    """
    bbox_scores = []
    mask_scores = []
    for ep in episodes:
        labels = make_labels(ep)
        for obj in ep.scene.objects:
            iid = obj.instance_id
            all_visible = [l.view_index for l in labels[iid]]
            sources = regime_views(all_visible, regime)
            visible = regime_views(all_visible, dst_regime)
            by_view = {l.view_index: l for l in labels[iid]}
            for src in sources:
                lab = by_view[src]
                cr = crop(ep.snapshots[src], lab.bbox, iid, margin=margin,
                          out_size=model.config.crop_size)
                if predictor is not None:
                    pts = predictor(ep, iid, src, cr)
                else:
                    feats = intrinsics_features(cr.intrinsics, cr.window,
                                                ep.snapshots[src].intrinsics)
                    pts = model.forward(cr.image[None], feats[None]).values[0]
                for dst in visible:
                    rel = ep.relative_pose(src, dst)
                    pts_dst = rel.apply(pts)
                    uv = project_clamped(pts_dst, ep.snapshots[dst].intrinsics)
                    pred_box = tight_bbox(Projection2D(uv))
                    bbox_scores.append(box_iou(pred_box, by_view[dst].bbox))
                    mask_scores.append(splat_iou(uv, ep.snapshots[dst].mask, iid))
    return {
        "bbox_iou": float(np.mean(bbox_scores)),
        "mask_iou": float(np.mean(mask_scores)),
        "pairs": len(bbox_scores),
    }
