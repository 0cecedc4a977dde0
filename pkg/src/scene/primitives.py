"""
Analytic surface primitives for the digital twin.

Each primitive is described in its own local frame and placed in the twin by
a Pose:

- cylinder: axis along local z, dimensions (radius, length), open tube unless
  capped
- box: centered, dimensions (extent_x, extent_y, extent_z)
- ring: annular tube around local z, dimensions (outer_radius, inner_radius,
  height), closed by two annular caps

All queries are vectorized over points or rays and return world-frame
quantities.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Tuple

import numpy as np

from src.geometry.se3 import Pose

PrimitiveKind = Literal["cylinder", "box", "ring"]

# Hits closer than this along the ray are ignored (self-intersection guard).
RAY_EPSILON = 1e-9

_DIMENSION_COUNT = {"cylinder": 2, "box": 3, "ring": 3}


@dataclass(frozen=True)
class Primitive:
    """A placed analytic surface.

    Attributes:
        kind: "cylinder", "box" or "ring"
        pose: Local-to-twin transform
        dimensions: Sizes in meters, see module docstring
        capped: Close a cylinder with end disks
        name: Human-readable label
    """

    kind: PrimitiveKind
    pose: Pose
    dimensions: Tuple[float, ...]
    capped: bool = False
    name: str = field(default="")

    def __post_init__(self) -> None:
        if self.kind not in _DIMENSION_COUNT:
            raise ValueError(f"Unknown primitive kind: {self.kind}")
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != _DIMENSION_COUNT[self.kind]:
            raise ValueError(
                f"{self.kind} needs {_DIMENSION_COUNT[self.kind]} dimensions, got {dims}"
            )
        if any(d <= 0 for d in dims):
            raise ValueError(f"Primitive dimensions must be positive, got {dims}")
        if self.kind == "ring" and dims[1] >= dims[0]:
            raise ValueError(f"Ring inner radius {dims[1]} must be below outer radius {dims[0]}")
        object.__setattr__(self, "dimensions", dims)

    # ------------------------------------------------------------
    # Frames
    # ------------------------------------------------------------

    def to_local(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return (pts - self.pose.translation) @ self.pose.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.pose.rotation.T + self.pose.translation

    # ------------------------------------------------------------
    # Area and sampling
    # ------------------------------------------------------------

    def surface_parts(self) -> List[Tuple[str, float]]:
        """Named surface patches with their areas."""
        if self.kind == "cylinder":
            r, length = self.dimensions
            parts = [("lateral", 2.0 * math.pi * r * length)]
            if self.capped:
                parts += [("cap_top", math.pi * r * r), ("cap_bottom", math.pi * r * r)]
            return parts
        if self.kind == "box":
            ex, ey, ez = self.dimensions
            return [
                ("+x", ey * ez), ("-x", ey * ez),
                ("+y", ex * ez), ("-y", ex * ez),
                ("+z", ex * ey), ("-z", ex * ey),
            ]
        ro, ri, h = self.dimensions
        annulus = math.pi * (ro * ro - ri * ri)
        return [
            ("outer", 2.0 * math.pi * ro * h),
            ("inner", 2.0 * math.pi * ri * h),
            ("cap_top", annulus),
            ("cap_bottom", annulus),
        ]

    def area(self) -> float:
        return float(sum(a for _, a in self.surface_parts()))

    def sample(self, rng: np.random.Generator, density: float) -> np.ndarray:
        """Uniform surface samples in the twin frame, round(density * area) per patch."""
        chunks = []
        for part, area in self.surface_parts():
            n = int(round(density * area))
            if n > 0:
                chunks.append(self._sample_part(part, n, rng))
        if not chunks:
            return np.zeros((0, 3))
        return self.to_world(np.concatenate(chunks, axis=0))

    def _sample_part(self, part: str, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "box":
            half = 0.5 * np.asarray(self.dimensions)
            axis = "xyz".index(part[1])
            pts = rng.uniform(-half, half, size=(n, 3))
            pts[:, axis] = half[axis] if part[0] == "+" else -half[axis]
            return pts
        if self.kind == "cylinder":
            r, length = self.dimensions
            half_len = 0.5 * length
            if part == "lateral":
                theta = rng.uniform(0.0, 2.0 * math.pi, n)
                z = rng.uniform(-half_len, half_len, n)
                return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
            return _disk_samples(rng, n, 0.0, r, half_len if part == "cap_top" else -half_len)
        ro, ri, h = self.dimensions
        half_h = 0.5 * h
        if part in ("outer", "inner"):
            radius = ro if part == "outer" else ri
            theta = rng.uniform(0.0, 2.0 * math.pi, n)
            z = rng.uniform(-half_h, half_h, n)
            return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])
        return _disk_samples(rng, n, ri, ro, half_h if part == "cap_top" else -half_h)

    # ------------------------------------------------------------
    # Distance
    # ------------------------------------------------------------

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned Euclidean distance from each point to the surface."""
        p = self.to_local(points)
        if self.kind == "box":
            return np.abs(_box_sdf(p, 0.5 * np.asarray(self.dimensions)))
        rho = np.hypot(p[:, 0], p[:, 1])
        if self.kind == "cylinder":
            r, length = self.dimensions
            half_len = 0.5 * length
            if self.capped:
                q = np.column_stack([rho, p[:, 2]])
                return np.abs(_box_sdf(q, np.array([r, half_len]), center=np.zeros(2)))
            dz = np.maximum(np.abs(p[:, 2]) - half_len, 0.0)
            return np.hypot(rho - r, dz)
        ro, ri, h = self.dimensions
        q = np.column_stack([rho, p[:, 2]])
        center = np.array([0.5 * (ro + ri), 0.0])
        return np.abs(_box_sdf(q, np.array([0.5 * (ro - ri), 0.5 * h]), center=center))

    # ------------------------------------------------------------
    # Ray casting
    # ------------------------------------------------------------

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Ray parameter of the first hit per ray, inf where the ray misses.

        Args:
            origins: (N, 3) or (3,) ray origins in the twin frame
            directions: (N, 3) ray directions in the twin frame (need not be unit)

        Returns:
            (N,) array of hit parameters t with hit = origin + t * direction
        """
        d_world = np.asarray(directions, dtype=float).reshape(-1, 3)
        o_world = np.broadcast_to(np.asarray(origins, dtype=float).reshape(-1, 3), d_world.shape)
        o = (o_world - self.pose.translation) @ self.pose.rotation
        d = d_world @ self.pose.rotation
        if self.kind == "box":
            return _slab_hits(o, d, 0.5 * np.asarray(self.dimensions))
        if self.kind == "cylinder":
            r, length = self.dimensions
            half_len = 0.5 * length
            t = _tube_hits(o, d, r, half_len)
            if self.capped:
                t = np.minimum(t, _disk_hits(o, d, half_len, 0.0, r))
                t = np.minimum(t, _disk_hits(o, d, -half_len, 0.0, r))
            return t
        ro, ri, h = self.dimensions
        half_h = 0.5 * h
        t = np.minimum(_tube_hits(o, d, ro, half_h), _tube_hits(o, d, ri, half_h))
        t = np.minimum(t, _disk_hits(o, d, half_h, ri, ro))
        return np.minimum(t, _disk_hits(o, d, -half_h, ri, ro))

    # ------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "pose": self.pose.to_list(),
            "dimensions": list(self.dimensions),
            "capped": self.capped,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Primitive":
        return cls(
            kind=data["kind"],
            pose=Pose.from_list(data["pose"]),
            dimensions=tuple(data["dimensions"]),
            capped=bool(data.get("capped", False)),
            name=data.get("name", ""),
        )


# ============================================================
# Local-frame helpers
# ============================================================


def _disk_samples(rng: np.random.Generator, n: int, r_min: float, r_max: float, z: float) -> np.ndarray:
    rho = np.sqrt(rng.uniform(r_min * r_min, r_max * r_max, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.full(n, z)])


def _box_sdf(p: np.ndarray, half: np.ndarray, center: np.ndarray = None) -> np.ndarray:
    """Signed distance to an axis-aligned box boundary (any dimension)."""
    if center is not None:
        p = p - center
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(np.max(q, axis=1), 0.0)
    return outside + inside


def _slab_hits(o: np.ndarray, d: np.ndarray, half: np.ndarray) -> np.ndarray:
    safe = np.where(np.abs(d) < 1e-300, 1e-300, d)
    t1 = (-half - o) / safe
    t2 = (half - o) / safe
    t_near = np.max(np.minimum(t1, t2), axis=1)
    t_far = np.min(np.maximum(t1, t2), axis=1)
    hit = t_far >= np.maximum(t_near, RAY_EPSILON)
    t = np.where(t_near > RAY_EPSILON, t_near, t_far)
    return np.where(hit, t, np.inf)


def _tube_hits(o: np.ndarray, d: np.ndarray, radius: float, half_len: float) -> np.ndarray:
    """First hit with the lateral surface rho = radius, |z| <= half_len."""
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    valid = (a > 1e-300) & (disc >= 0.0)
    sqrt_disc = np.sqrt(np.where(valid, disc, 0.0))
    safe_a = np.where(valid, a, 1.0)
    # numerically stable quadratic roots
    qv = -0.5 * (b + np.copysign(sqrt_disc, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = qv / safe_a
        r2 = np.where(qv != 0.0, c / qv, r1)
    t_lo = np.minimum(r1, r2)
    t_hi = np.maximum(r1, r2)
    best = np.full(len(o), np.inf)
    for t in (t_hi, t_lo):
        z = o[:, 2] + t * d[:, 2]
        ok = valid & (t > RAY_EPSILON) & (np.abs(z) <= half_len)
        best = np.where(ok, t, best)
    return best


def _disk_hits(o: np.ndarray, d: np.ndarray, z0: float, r_min: float, r_max: float) -> np.ndarray:
    """Hit with the annulus r_min <= rho <= r_max in the plane z = z0."""
    dz = d[:, 2]
    nonzero = np.abs(dz) > 1e-300
    t = np.where(nonzero, (z0 - o[:, 2]) / np.where(nonzero, dz, 1.0), np.inf)
    with np.errstate(invalid="ignore"):
        x = o[:, 0] + t * d[:, 0]
        y = o[:, 1] + t * d[:, 1]
        rho = np.hypot(x, y)
        ok = nonzero & (t > RAY_EPSILON) & (rho <= r_max) & (rho >= r_min)
    return np.where(ok, t, np.inf)
