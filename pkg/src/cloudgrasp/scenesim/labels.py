"""Self-supervised labels from rendered views, and the dynamic crop step.

For object m in view n the labels are the mask-derived tight bounding box and
the masked-depth back-projected partial cloud (in view-n's camera frame) with
its pixel coordinates. Cross-view association uses ground-truth instance ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import (BBox2D, CameraIntrinsics, EmptyInputError, PointCloud,
                        Projection2D, backproject, bbox_from_pixels, camera_frame)
from .episode import Episode
from .render import Snapshot


class CoverageError(RuntimeError):
    """An object is absent from every view of the episode."""


class CropError(ValueError):
    """Crop window does not intersect the image."""


@dataclass
class ObjectViewLabel:
    """Supervision data for one (object, view) pair."""

    instance_id: int
    view_index: int
    bbox: BBox2D
    pixels: Projection2D              # (P, 2) mask pixel coordinates (u, v)
    partial_cloud: PointCloud         # back-projected masked depth, camera frame
    mask_pixel_count: int

    def sample_mask_pixels(self, n: int, seed: int) -> np.ndarray:
        """Deterministic subsample of the mask interior for silhouette losses."""
        px = self.pixels.points2d
        if len(px) <= n:
            return px
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(px), size=n, replace=False)
        return px[np.sort(idx)]

    def sample_partial_cloud(self, n: int, seed: int) -> np.ndarray:
        pts = self.partial_cloud.points
        if len(pts) <= n:
            return pts
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(pts), size=n, replace=False)
        return pts[np.sort(idx)]


def view_label(snapshot: Snapshot, instance_id: int) -> ObjectViewLabel | None:
    """Label for one object in one snapshot, or None if not visible there."""
    m = snapshot.mask == instance_id
    valid = m & (snapshot.depth > 0)
    vs, us = np.nonzero(valid)
    if len(us) == 0:
        return None
    bbox = bbox_from_pixels(us, vs)
    depth = snapshot.depth[vs, us]
    rows = np.stack([us.astype(np.float64), vs.astype(np.float64), depth], axis=1)
    cloud = backproject(rows, snapshot.intrinsics, camera_frame(snapshot.view_index))
    return ObjectViewLabel(
        instance_id=instance_id,
        view_index=snapshot.view_index,
        bbox=bbox,
        pixels=Projection2D(rows[:, :2]),
        partial_cloud=cloud,
        mask_pixel_count=len(us),
    )


def make_labels(episode: Episode) -> dict[int, list[ObjectViewLabel]]:
    """Per-object, per-view labels for every view where the object is visible."""
    out: dict[int, list[ObjectViewLabel]] = {}
    for obj in episode.scene.objects:
        labels = []
        for snap in episode.snapshots:
            lab = view_label(snap, obj.instance_id)
            if lab is not None:
                labels.append(lab)
        if not labels:
            raise CoverageError(f"object {obj.instance_id} is absent from all views")
        out[obj.instance_id] = labels
    return out


@dataclass
class CropResult:
    """5-channel (R,G,B,D,M) crop with the intrinsics adapted to the window."""

    image: np.ndarray                 # (5, out_h, out_w) float64
    intrinsics: CameraIntrinsics      # valid for crop pixel coordinates
    window: tuple[int, int, int, int]  # (u0, v0, u1, v1) inclusive source pixels
    scale: tuple[float, float]        # (s_u, s_v) resample factors


def crop(snapshot: Snapshot, bbox: BBox2D, target_instance: int,
         margin: float = 0.25, out_size: tuple[int, int] = (48, 64)) -> CropResult:
    """Crop RGBD-M around a box and resample to out_size = (height, width).

    The window is the box expanded by `margin` (a fraction of its larger side),
    clamped to the image. Pixel coordinates map through u' = (u - u0) * s_u,
    so the adapted intrinsics are fx' = fx*s_u, cx' = (cx - u0)*s_u
    (same for v); nearest-neighbor resampling keeps depth values clean.
    """
    h, w = snapshot.depth.shape
    out_h, out_w = out_size
    pad = margin * max(bbox.w, bbox.h, 4.0)
    u0 = int(np.floor(bbox.u_min - pad))
    u1 = int(np.ceil(bbox.u_max + pad))
    v0 = int(np.floor(bbox.v_min - pad))
    v1 = int(np.ceil(bbox.v_max + pad))
    u0, u1 = max(u0, 0), min(u1, w - 1)
    v0, v1 = max(v0, 0), min(v1, h - 1)
    if u1 < u0 or v1 < v0:
        raise CropError(f"window ({u0},{v0})..({u1},{v1}) does not intersect image")

    win_w = u1 - u0 + 1
    win_h = v1 - v0 + 1
    s_u = out_w / win_w
    s_v = out_h / win_h

    # nearest source pixel for each output pixel center
    src_u = np.clip(np.round(np.arange(out_w) / s_u).astype(int) + u0, u0, u1)
    src_v = np.clip(np.round(np.arange(out_h) / s_v).astype(int) + v0, v0, v1)
    uu, vv = np.meshgrid(src_u, src_v)

    img = np.empty((5, out_h, out_w))
    img[0:3] = snapshot.color[vv, uu].transpose(2, 0, 1)
    img[3] = snapshot.depth[vv, uu]
    img[4] = (snapshot.mask[vv, uu] == target_instance).astype(np.float64)

    intr = snapshot.intrinsics
    adapted = CameraIntrinsics(
        fx=intr.fx * s_u, fy=intr.fy * s_v,
        cx=(intr.cx - u0) * s_u, cy=(intr.cy - v0) * s_v,
        width=out_w, height=out_h,
    )
    return CropResult(img, adapted, (u0, v0, u1, v1), (s_u, s_v))
