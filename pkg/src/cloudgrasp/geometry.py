"""Pinhole camera model, rigid transforms, point clouds, boxes and IOU.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (camera looks along +z).
* Pixel coordinates are continuous, with the origin at the *center* of the
  top-left pixel; u grows right (columns), v grows down (rows).
* Box extents use w = max - min (no +1 pixel convention), matching the
  continuous-coordinate projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Canonical frame labels. Camera frames are per-view ("cam0", "cam1", ...).
BASE_FRAME = "base"  # robot base; coincides with the simulator world frame
GRASP_FRAME = "grasp"


def camera_frame(view_index: int) -> str:
    return f"cam{view_index}"


class FrameMismatchError(ValueError):
    """Operation mixed point sets / transforms from different frames."""


class BehindCameraError(ValueError):
    """A point with z <= 0 cannot be projected."""

    def __init__(self, index: int, z: float):
        super().__init__(f"point {index} is behind the camera (z={z:.6g})")
        self.index = index
        self.z = z


class InvalidDepthError(ValueError):
    """Depth values must be strictly positive."""


class EmptyInputError(ValueError):
    """Operation requires at least one point."""


def _readonly(a: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of K 3D points (meters) in a named reference frame."""

    points: np.ndarray  # (K, 3) float64, read-only
    frame_id: str

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise EmptyInputError(f"point cloud must be (K>=1, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels.

    Crop-adapted intrinsics may place the principal point outside the window,
    so only sensor-level construction (see sensor_intrinsics) enforces
    0 <= cx <= width and 0 <= cy <= height.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")


def sensor_intrinsics(fx: float, fy: float, cx: float, cy: float,
                      width: int, height: int) -> CameraIntrinsics:
    """Construct physical-sensor intrinsics (principal point inside the image)."""
    if not (0 <= cx <= width and 0 <= cy <= height):
        raise ValueError("principal point outside the image")
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation mapping points from `from_frame` to `to_frame`."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)
    from_frame: str
    to_frame: str

    def __post_init__(self):
        r = _readonly(self.rotation, (3, 3), "rotation")
        t = _readonly(self.translation, (3,), "translation")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation, self.to_frame, self.from_frame)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map raw (N, 3) coordinates; no frame bookkeeping."""
        return points @ self.rotation.T + self.translation


def identity_transform(frame: str, to_frame: str | None = None) -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3), frame, to_frame if to_frame is not None else frame)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose(t2: RigidTransform, t1: RigidTransform) -> RigidTransform:
    """Transform equal to applying t1 first, then t2."""
    if t1.to_frame != t2.from_frame:
        raise FrameMismatchError(
            f"cannot compose: t1 maps to '{t1.to_frame}' but t2 maps from '{t2.from_frame}'"
        )
    return RigidTransform(
        t2.rotation @ t1.rotation,
        t2.rotation @ t1.translation + t2.translation,
        t1.from_frame,
        t2.to_frame,
    )


def transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Map a cloud through a rigid transform; preserves point order."""
    if cloud.frame_id != t.from_frame:
        raise FrameMismatchError(
            f"cloud is in frame '{cloud.frame_id}' but transform maps from '{t.from_frame}'"
        )
    return PointCloud(t.apply(cloud.points), t.to_frame)


@dataclass(frozen=True)
class Projection2D:
    """K continuous pixel coordinates (u_k, v_k), in source-cloud order."""

    points2d: np.ndarray  # (K, 2) float64, read-only

    def __post_init__(self):
        p = np.ascontiguousarray(self.points2d, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise EmptyInputError(f"projection must be (K>=1, 2), got {p.shape}")
        p.flags.writeable = False
        object.__setattr__(self, "points2d", p)

    def __len__(self) -> int:
        return self.points2d.shape[0]


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned 2D box: center (u_mid, v_mid) and extents (w, h) in pixels."""

    u_mid: float
    v_mid: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("box extents must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.u_mid, self.v_mid, self.w, self.h])

    @property
    def u_min(self) -> float:
        return self.u_mid - self.w / 2

    @property
    def u_max(self) -> float:
        return self.u_mid + self.w / 2

    @property
    def v_min(self) -> float:
        return self.v_mid - self.h / 2

    @property
    def v_max(self) -> float:
        return self.v_mid + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h


def project(cloud: PointCloud, intrinsics: CameraIntrinsics) -> Projection2D:
    """Pinhole-project camera-frame points: u = fx*x/z + cx, v = fy*y/z + cy."""
    pts = cloud.points
    z = pts[:, 2]
    bad = np.flatnonzero(z <= 0)
    if bad.size:
        i = int(bad[0])
        raise BehindCameraError(i, float(z[i]))
    u = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    return Projection2D(np.stack([u, v], axis=1))


def backproject(depth_pixels: np.ndarray, intrinsics: CameraIntrinsics,
                frame_id: str = "camera") -> PointCloud:
    """Invert the pinhole model on (u, v, z) rows: exact inverse of project()."""
    dp = np.asarray(depth_pixels, dtype=np.float64)
    if dp.ndim != 2 or dp.shape[1] != 3 or dp.shape[0] < 1:
        raise EmptyInputError(f"expected (N>=1, 3) rows of (u, v, z), got {dp.shape}")
    z = dp[:, 2]
    if np.any(z <= 0):
        i = int(np.flatnonzero(z <= 0)[0])
        raise InvalidDepthError(f"depth at row {i} is not positive (z={z[i]:.6g})")
    x = (dp[:, 0] - intrinsics.cx) * z / intrinsics.fx
    y = (dp[:, 1] - intrinsics.cy) * z / intrinsics.fy
    return PointCloud(np.stack([x, y, z], axis=1), frame_id)


def tight_bbox(proj: Projection2D) -> BBox2D:
    """Smallest box covering the projected points (continuous coordinates)."""
    uv = proj.points2d
    u_min, v_min = uv.min(axis=0)
    u_max, v_max = uv.max(axis=0)
    return BBox2D((u_min + u_max) / 2, (v_min + v_max) / 2, u_max - u_min, v_max - v_min)


def bbox_from_pixels(us: np.ndarray, vs: np.ndarray) -> BBox2D:
    """Tight box over a set of integer mask pixel coordinates."""
    if len(us) == 0:
        raise EmptyInputError("empty pixel set")
    return tight_bbox(Projection2D(np.stack([np.asarray(us, float), np.asarray(vs, float)], axis=1)))


def iou(a: BBox2D, b: BBox2D) -> float:
    """Intersection over union of two boxes; 0 when disjoint or both degenerate."""
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
