"""Geometric primitives: analytic rays, containment, and surface sampling.

All shape math lives in the primitive's local frame. Rays are given as
origins `o` and directions `d` (not necessarily unit length); intersections
return the smallest parameter t > eps such that o + t*d lies on the surface,
or +inf on a miss. This keeps the renderer's z-buffer exact: with camera-frame
directions scaled to d_z = 1, t *is* the z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidTransform

_EPS = 1e-9
_INF = np.inf


class Sphere:
    def __init__(self, radius: float):
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.radius = float(radius)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        a = np.einsum("ij,ij->i", d, d)
        b = np.einsum("ij,ij->i", o, d)
        c = np.einsum("ij,ij->i", o, o) - self.radius ** 2
        disc = b * b - a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, _INF))
        return np.where(hit, t, _INF)

    def contains(self, p: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", p, p) <= self.radius ** 2

    def normals(self, p: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(p, axis=1, keepdims=True)
        return p / np.maximum(n, 1e-12)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        return np.abs(np.linalg.norm(p, axis=1) - self.radius)

    def surface_area(self) -> float:
        return 4.0 * np.pi * self.radius ** 2

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
        return v * self.radius

    def min_z(self) -> float:
        return -self.radius

    def max_z(self) -> float:
        return self.radius

    def footprint_radius(self) -> float:
        return self.radius

    def to_dict(self) -> dict:
        return {"kind": "sphere", "radius": self.radius}


class Box:
    """Axis-aligned box in its local frame, given by half extents."""

    def __init__(self, half_extents):
        h = np.asarray(half_extents, dtype=np.float64)
        if h.shape != (3,) or np.any(h <= 0):
            raise ValueError("box half extents must be 3 positive values")
        self.half = h

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t_lo = (-self.half - o) * inv
            t_hi = (self.half - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = d == 0.0
        inside = np.abs(o) <= self.half
        t_lo = np.where(par, np.where(inside, -_INF, _INF), t_lo)
        t_hi = np.where(par, np.where(inside, _INF, -_INF), t_hi)
        near = np.minimum(t_lo, t_hi).max(axis=1)
        far = np.maximum(t_lo, t_hi).min(axis=1)
        hit = far >= np.maximum(near, _EPS)
        t = np.where(near > _EPS, near, far)
        return np.where(hit & (t > _EPS), t, _INF)

    def contains(self, p: np.ndarray) -> np.ndarray:
        return np.all(np.abs(p) <= self.half, axis=1)

    def normals(self, p: np.ndarray) -> np.ndarray:
        rel = np.abs(p) / self.half
        axis = np.argmax(rel, axis=1)
        n = np.zeros_like(p)
        n[np.arange(len(p)), axis] = np.sign(p[np.arange(len(p)), axis])
        return n

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)

    def surface_area(self) -> float:
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        hx, hy, hz = self.half
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        for f in range(6):
            m = face == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            other = [i for i in range(3) if i != axis]
            pts[m, axis] = sign * self.half[axis]
            pts[m, other[0]] = uv[m, 0] * self.half[other[0]]
            pts[m, other[1]] = uv[m, 1] * self.half[other[1]]
        return pts

    def min_z(self) -> float:
        return -float(self.half[2])

    def max_z(self) -> float:
        return float(self.half[2])

    def footprint_radius(self) -> float:
        return float(np.hypot(self.half[0], self.half[1]))

    def to_dict(self) -> dict:
        return {"kind": "box", "half_extents": self.half.tolist()}


class Cylinder:
    """Capped cylinder along local z, centered at the origin."""

    def __init__(self, radius: float, height: float):
        if radius <= 0 or height <= 0:
            raise ValueError("cylinder radius and height must be positive")
        self.radius = float(radius)
        self.height = float(height)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        hh = self.height / 2
        r2 = self.radius ** 2
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r2
        disc = b * b - a * c
        best = np.full(len(o), _INF)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (disc >= 0) & (a > 0)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for t_side in ((-b - sq) / np.where(a > 0, a, 1.0),
                           (-b + sq) / np.where(a > 0, a, 1.0)):
                z = o[:, 2] + t_side * d[:, 2]
                valid = ok & (t_side > _EPS) & (np.abs(z) <= hh)
                best = np.where(valid & (t_side < best), t_side, best)
            for zc in (hh, -hh):
                dz = d[:, 2]
                t_cap = np.where(dz != 0, (zc - o[:, 2]) / np.where(dz != 0, dz, 1.0), _INF)
                x = o[:, 0] + t_cap * d[:, 0]
                y = o[:, 1] + t_cap * d[:, 1]
                valid = (t_cap > _EPS) & (x * x + y * y <= r2)
                best = np.where(valid & (t_cap < best), t_cap, best)
        return best

    def contains(self, p: np.ndarray) -> np.ndarray:
        return (p[:, 0] ** 2 + p[:, 1] ** 2 <= self.radius ** 2) & \
               (np.abs(p[:, 2]) <= self.height / 2)

    def normals(self, p: np.ndarray) -> np.ndarray:
        hh = self.height / 2
        on_cap = np.abs(np.abs(p[:, 2]) - hh) < np.abs(
            np.hypot(p[:, 0], p[:, 1]) - self.radius)
        n = np.zeros_like(p)
        side = ~on_cap
        r = np.hypot(p[side, 0], p[side, 1])
        n[side, 0] = p[side, 0] / np.maximum(r, 1e-12)
        n[side, 1] = p[side, 1] / np.maximum(r, 1e-12)
        n[on_cap, 2] = np.sign(p[on_cap, 2])
        return n

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        dr = np.hypot(p[:, 0], p[:, 1]) - self.radius
        dz = np.abs(p[:, 2]) - self.height / 2
        d = np.stack([dr, dz], axis=1)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return np.abs(outside + inside)

    def surface_area(self) -> float:
        return 2 * np.pi * self.radius * self.height + 2 * np.pi * self.radius ** 2

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        side = 2 * np.pi * self.radius * self.height
        cap = np.pi * self.radius ** 2
        which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        theta = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.empty((n, 3))
        m = which == 0
        pts[m, 0] = self.radius * np.cos(theta[m])
        pts[m, 1] = self.radius * np.sin(theta[m])
        pts[m, 2] = rng.uniform(-self.height / 2, self.height / 2, size=m.sum())
        for w, zc in ((1, self.height / 2), (2, -self.height / 2)):
            m = which == w
            r = self.radius * np.sqrt(rng.uniform(0, 1, size=m.sum()))
            pts[m, 0] = r * np.cos(theta[m])
            pts[m, 1] = r * np.sin(theta[m])
            pts[m, 2] = zc
        return pts

    def min_z(self) -> float:
        return -self.height / 2

    def max_z(self) -> float:
        return self.height / 2

    def footprint_radius(self) -> float:
        return self.radius

    def to_dict(self) -> dict:
        return {"kind": "cylinder", "radius": self.radius, "height": self.height}


class Composite:
    """Union of up to 3 rigidly attached child primitives (translation offsets)."""

    def __init__(self, children: list[tuple[np.ndarray, object]]):
        if not 1 <= len(children) <= 3:
            raise ValueError("composite needs 1..3 children")
        self.children = [(np.asarray(off, dtype=np.float64), shape) for off, shape in children]

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        best = np.full(len(o), _INF)
        for off, shape in self.children:
            best = np.minimum(best, shape.intersect(o - off, d))
        return best

    def contains(self, p: np.ndarray) -> np.ndarray:
        inside = np.zeros(len(p), dtype=bool)
        for off, shape in self.children:
            inside |= shape.contains(p - off)
        return inside

    def normals(self, p: np.ndarray) -> np.ndarray:
        # attribute each point to the child whose surface is nearest
        n = np.zeros_like(p)
        best = np.full(len(p), _INF)
        for off, shape in self.children:
            local = p - off
            dist = shape.surface_distance(local)
            take = dist < best
            best = np.where(take, dist, best)
            n[take] = shape.normals(local[take])
        return n

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        best = np.full(len(p), _INF)
        for off, shape in self.children:
            best = np.minimum(best, shape.surface_distance(p - off))
        return best

    def surface_area(self) -> float:
        return sum(shape.surface_area() for _, shape in self.children)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        areas = np.array([shape.surface_area() for _, shape in self.children])
        counts = rng.multinomial(n, areas / areas.sum())
        parts = [shape.sample_surface(c, rng) + off
                 for (off, shape), c in zip(self.children, counts) if c > 0]
        return np.concatenate(parts, axis=0)

    def min_z(self) -> float:
        return min(float(off[2]) + shape.min_z() for off, shape in self.children)

    def max_z(self) -> float:
        return max(float(off[2]) + shape.max_z() for off, shape in self.children)

    def footprint_radius(self) -> float:
        return max(float(np.hypot(off[0], off[1])) + shape.footprint_radius()
                   for off, shape in self.children)

    def to_dict(self) -> dict:
        return {"kind": "composite",
                "children": [{"offset": off.tolist(), "shape": shape.to_dict()}
                             for off, shape in self.children]}


def shape_from_dict(d: dict):
    kind = d["kind"]
    if kind == "sphere":
        return Sphere(d["radius"])
    if kind == "box":
        return Box(d["half_extents"])
    if kind == "cylinder":
        return Cylinder(d["radius"], d["height"])
    if kind == "composite":
        return Composite([(np.array(c["offset"]), shape_from_dict(c["shape"]))
                          for c in d["children"]])
    raise ValueError(f"unknown shape kind {kind!r}")


@dataclass
class PrimitiveObject:
    """A posed primitive in the world frame with identity and color."""

    shape: object  # Sphere | Box | Cylinder | Composite
    pose: RigidTransform  # object -> world
    instance_id: int
    color: np.ndarray  # (3,) in [0, 1]

    def to_local(self, points_world: np.ndarray) -> np.ndarray:
        return (points_world - self.pose.translation) @ self.pose.rotation

    def to_world(self, points_local: np.ndarray) -> np.ndarray:
        return points_local @ self.pose.rotation.T + self.pose.translation

    def intersect_world(self, o_world: np.ndarray, d_world: np.ndarray) -> np.ndarray:
        o = self.to_local(o_world)
        d = d_world @ self.pose.rotation
        return self.shape.intersect(o, d)

    def contains_world(self, points_world: np.ndarray) -> np.ndarray:
        return self.shape.contains(self.to_local(points_world))

    def sample_surface_world(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.to_world(self.shape.sample_surface(n, rng))

    def normals_world(self, points_world: np.ndarray) -> np.ndarray:
        return self.shape.normals(self.to_local(points_world)) @ self.pose.rotation.T
