"""Grasp samples, the heuristic sampling policy, and the geometric grasp oracle.

The oracle replaces physical execution of the pre-grasp / descend / close /
lift protocol with deterministic geometry on ground-truth surface samples:

(i)   collision: the descent corridor of the (pre-closed) fingers must not
      intersect the table or any non-target object;
(ii)  fit: the target surface inside the jaw window must sit strictly between
      the open fingers (half-width r* < w_jaw / 2);
(iii) antipodal contact: closing symmetrically onto the target, both inner
      finger faces must meet target surface within one finger thickness;
(iv)  the contact centroid must lie within the finger-length extent.

Fingers are modeled as pre-closed to the target's half-width r* before the
descent, which makes oracle success monotone in jaw width: enlarging w_jaw
only relaxes the fit condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (BASE_FRAME, GRASP_FRAME, EmptyInputError, FrameMismatchError,
                       PointCloud, RigidTransform, rotation_z, transform, compose)
from .scenesim.scene import Scene


@dataclass(frozen=True)
class GraspSample:
    """Gripper position p (robot-base frame, meters) and yaw psi (radians)."""

    p: np.ndarray  # (3,)
    psi: float

    def __post_init__(self):
        p = np.ascontiguousarray(self.p, dtype=np.float64)
        if p.shape != (3,):
            raise ValueError(f"grasp position must be a 3-vector, got {p.shape}")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        if not -np.pi / 2 <= self.psi <= np.pi / 2:
            raise ValueError(f"psi {self.psi} outside [-pi/2, pi/2]")

    def as_array(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], self.p[2], self.psi])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "GraspSample":
        return cls(np.asarray(a[:3], dtype=np.float64), float(a[3]))


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper dimensions and the pre-grasp height offset."""

    jaw_width: float = 0.08        # max opening between inner finger faces
    finger_length: float = 0.05    # vertical extent of the fingers
    finger_thickness: float = 0.01
    finger_width: float = 0.02     # lateral plate width (along grasp-frame y)
    pre_grasp_height: float = 0.10  # descent distance from the pre-grasp pose

    def __post_init__(self):
        vals = (self.jaw_width, self.finger_length, self.finger_thickness,
                self.finger_width, self.pre_grasp_height)
        if any(v <= 0 for v in vals):
            raise ValueError("all gripper dimensions must be positive")


def grasp_pose(s: GraspSample) -> RigidTransform:
    """Grasp frame -> robot base: origin at p, x = closing axis yawed by psi."""
    return RigidTransform(rotation_z(s.psi), s.p, GRASP_FRAME, BASE_FRAME)


def fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded Fisher-Yates permutation of range(n)."""
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def to_grasp_frame(cloud: PointCloud, s: GraspSample, cam_to_base: RigidTransform,
                   rng: np.random.Generator | None = None) -> PointCloud:
    """Express a camera-frame cloud relative to the proposed gripper pose.

    Applies camera->base then base->grasp; point order is then shuffled by a
    seeded Fisher-Yates when `rng` is given (the critic is trained to be
    order-agnostic).
    """
    if cloud.frame_id != cam_to_base.from_frame:
        raise FrameMismatchError(
            f"cloud frame '{cloud.frame_id}' != transform source "
            f"'{cam_to_base.from_frame}'")
    base_to_grasp = grasp_pose(s).inverse()
    out = transform(cloud, compose(base_to_grasp, cam_to_base))
    if rng is not None:
        out = PointCloud(out.points[fisher_yates(len(out), rng)], out.frame_id)
    return out


def heuristic_sample(cloud: PointCloud, rng: np.random.Generator,
                     sigma: float = 0.02) -> GraspSample:
    """Grasp at the cloud centroid plus clipped gaussian noise; uniform yaw."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot sample a grasp from an empty cloud")
    eps = rng.normal(0.0, sigma, size=3) if sigma > 0 else np.zeros(3)
    eps = np.clip(eps, -3 * sigma, 3 * sigma)
    psi = rng.uniform(-np.pi / 2, np.pi / 2)
    return GraspSample(cloud.centroid() + eps, psi)


def _probe_grid(x_lo, x_hi, y_lo, y_hi, z_lo, z_hi, step=0.005) -> np.ndarray:
    def axis(lo, hi):
        n = max(2, int(np.ceil((hi - lo) / step)) + 1)
        return np.linspace(lo, hi, n)
    g = np.meshgrid(axis(x_lo, x_hi), axis(y_lo, y_hi), axis(z_lo, z_hi), indexing="ij")
    return np.stack([a.reshape(-1) for a in g], axis=1)


def grasp_oracle(scene: Scene, target_instance: int, s: GraspSample,
                 gripper: GripperModel | None = None,
                 surface_samples: int = 2048) -> bool:
    """Deterministic geometric success check for one grasp; see module docs."""
    g = gripper or GripperModel()
    target = scene.object_by_id(target_instance)  # raises KeyError when unknown
    base_to_grasp = grasp_pose(s).inverse()
    hw = g.finger_width / 2
    hl = g.finger_length / 2

    # fingertips must stay above the table through the descent
    if s.p[2] - hl < scene.table_height - 1e-9:
        return False

    pts = base_to_grasp.apply(scene.surface_points(target_instance, surface_samples))
    window = (np.abs(pts[:, 1]) <= hw) & (np.abs(pts[:, 2]) <= hl)
    w_pts = pts[window]
    if len(w_pts) == 0:
        return False  # nothing between the fingers

    x_max = w_pts[:, 0].max()
    x_min = w_pts[:, 0].min()
    r_star = max(x_max, -x_min)  # closure half-separation at first contact
    if r_star <= 0 or r_star >= g.jaw_width / 2:
        return False  # (ii) does not fit between the open fingers

    # (iii) both inner faces reach target surface within one finger thickness
    tol = r_star - g.finger_thickness
    if not (np.any(w_pts[:, 0] >= tol) and np.any(w_pts[:, 0] <= -tol)):
        return False

    # (iv) contact centroid within the finger-length extent
    contacts = w_pts[np.abs(w_pts[:, 0]) >= tol]
    cz = contacts[:, 2].mean()
    if not -hl <= cz <= hl:
        return False

    # (i) descent corridor of the pre-closed fingers vs non-target geometry
    corr_x = r_star + g.finger_thickness
    z_top = hl + g.pre_grasp_height
    for obj in scene.objects:
        if obj.instance_id == target_instance:
            continue
        other = base_to_grasp.apply(scene.surface_points(obj.instance_id,
                                                         surface_samples))
        in_corr = (np.abs(other[:, 0]) <= corr_x) & (np.abs(other[:, 1]) <= hw) & \
                  (other[:, 2] >= -hl) & (other[:, 2] <= z_top)
        if np.any(in_corr):
            return False

    # finger solids probed against non-target interiors (catches containment)
    grasp_to_base = grasp_pose(s)
    probes_local = np.concatenate([
        _probe_grid(r_star, corr_x, -hw, hw, -hl, z_top),
        _probe_grid(-corr_x, -r_star, -hw, hw, -hl, z_top),
    ])
    probes_world = grasp_to_base.apply(probes_local)
    for obj in scene.objects:
        if obj.instance_id == target_instance:
            continue
        if np.any(obj.contains_world(probes_world)):
            return False
    return True
