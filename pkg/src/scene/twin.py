"""
Digital twin of the industrial mock-up and its task regimes.

The twin is immutable after construction. Its full surface cloud is sampled
once from the seed; each regime's target cloud is a radius crop of that cloud
around the regime's workspace point.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SceneConfig
from src.errors import UnknownRegime
from src.geometry.se3 import Pose, look_at, so3_exp
from src.scene.primitives import Primitive

logger = logging.getLogger(__name__)

REGIME_NAMES = ("valve_grasp", "valve_turn", "cage_pick", "cage_place")


@dataclass(frozen=True)
class Regime:
    """One task-mode partition of the twin.

    Attributes:
        id: Regime index in [0, M)
        name: Task label
        anchor_pose: Workspace pose of the task; its translation is the crop
            center and it doubles as the end-effector goal
        camera_offset: Nominal camera position relative to the anchor (m)
        crop_radius: Partition radius (m)
        target_cloud: Target points Q in the twin frame
    """

    id: int
    name: str
    anchor_pose: Pose
    camera_offset: np.ndarray
    crop_radius: float
    target_cloud: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        cloud = np.asarray(self.target_cloud, dtype=float).reshape(-1, 3)
        if len(cloud) == 0:
            raise ValueError(f"Regime {self.id} has an empty target cloud (crop_radius={self.crop_radius})")
        dist = np.linalg.norm(cloud - self.anchor_pose.translation, axis=1)
        if np.max(dist) > self.crop_radius + 1e-9:
            raise ValueError(
                f"Regime {self.id} target extends to {np.max(dist):.3f} m, beyond crop_radius {self.crop_radius}"
            )
        object.__setattr__(self, "target_cloud", cloud)
        object.__setattr__(self, "camera_offset", np.asarray(self.camera_offset, dtype=float).reshape(3))

    @property
    def anchor(self) -> np.ndarray:
        return self.anchor_pose.translation

    @property
    def nominal_camera(self) -> np.ndarray:
        return self.anchor + self.camera_offset


@dataclass(frozen=True)
class DigitalTwin:
    """Primitive model of the environment plus its regimes.

    Attributes:
        primitives: Placed analytic surfaces
        regimes: Task partitions, indexed by id
        cloud: Full surface sample used for partitioning (twin frame)
        seed: Seed the cloud was sampled with
    """

    primitives: Tuple[Primitive, ...]
    regimes: Tuple[Regime, ...] = ()
    cloud: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "cloud", np.asarray(self.cloud, dtype=float).reshape(-1, 3))
        ids = [r.id for r in self.regimes]
        if ids != list(range(len(ids))):
            raise ValueError(f"Regime ids must be 0..M-1 in order, got {ids}")

    @property
    def regime_count(self) -> int:
        return len(self.regimes)

    def regime(self, regime_id: int) -> Regime:
        """Look up a regime by id.

        Raises:
            UnknownRegime: If regime_id is outside [0, M)
        """
        if not isinstance(regime_id, (int, np.integer)) or not 0 <= regime_id < len(self.regimes):
            raise UnknownRegime(f"Unknown regime {regime_id}; twin has {len(self.regimes)} regimes")
        return self.regimes[int(regime_id)]

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest primitive surface."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not self.primitives:
            return np.full(len(pts), np.inf)
        return np.min(np.stack([p.distance(pts) for p in self.primitives]), axis=0)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Nearest hit parameter over all primitives, inf on a miss."""
        directions = np.asarray(directions, dtype=float).reshape(-1, 3)
        t = np.full(len(directions), np.inf)
        for primitive in self.primitives:
            t = np.minimum(t, primitive.intersect(origins, directions))
        return t

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "primitives": [p.to_dict() for p in self.primitives],
            "regimes": [
                {
                    "id": r.id,
                    "name": r.name,
                    "anchor_pose": r.anchor_pose.to_list(),
                    "camera_offset": [float(v) for v in r.camera_offset],
                    "crop_radius": r.crop_radius,
                    "target_points": len(r.target_cloud),
                }
                for r in self.regimes
            ],
        }


# ============================================================
# Sampling and partitioning
# ============================================================


def sample_surface(
    twin: DigitalTwin, density: float, rng: Optional[np.random.Generator] = None, seed: int = 0
) -> np.ndarray:
    """Sample every primitive surface at the given density (points/m^2).

    Raises:
        ValueError: If density is not positive
    """
    if density <= 0:
        raise ValueError(f"density must be positive, got {density}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    chunks = [p.sample(rng, density) for p in twin.primitives]
    chunks = [c for c in chunks if len(c)]
    if not chunks:
        return np.zeros((0, 3))
    return np.concatenate(chunks, axis=0)


def crop(cloud: np.ndarray, center: Sequence[float], radius: float) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if math.isinf(radius):
        return cloud.copy()
    keep = np.linalg.norm(cloud - np.asarray(center, dtype=float), axis=1) <= radius
    return cloud[keep]


def partition_target(twin: DigitalTwin, regime_id: int, crop_radius: Optional[float] = None) -> np.ndarray:
    """Twin surface points within the crop radius of a regime anchor.

    Args:
        twin: Digital twin with a sampled cloud
        regime_id: Regime to partition for
        crop_radius: Override of the regime's radius; inf returns the full cloud

    Raises:
        UnknownRegime: If the regime does not exist
    """
    regime = twin.regime(regime_id)
    radius = regime.crop_radius if crop_radius is None else float(crop_radius)
    return crop(twin.cloud, regime.anchor, radius)


def twin_hash(twin: DigitalTwin) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([p.to_dict() for p in twin.primitives], sort_keys=True).encode("utf-8"))
    h.update(np.ascontiguousarray(twin.cloud, dtype="<f8").tobytes())
    return h.hexdigest()


# ============================================================
# Mock-up scene
# ============================================================


def _axis_pose(position: Sequence[float], axis: Sequence[float]) -> Pose:
    """Pose whose local z axis points along `axis`."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    z = np.array([0.0, 0.0, 1.0])
    cross = np.cross(z, axis)
    s = np.linalg.norm(cross)
    if s < 1e-12:
        rotation = np.eye(3) if axis[2] > 0 else so3_exp([math.pi - 1e-9, 0.0, 0.0])
    else:
        angle = math.atan2(s, float(np.dot(z, axis)))
        rotation = so3_exp(cross / s * angle)
    return Pose(rotation, np.asarray(position, dtype=float))


def mockup_primitives(pipe_count: int = 3) -> List[Primitive]:
    """Pipes along x behind a flange valve, and a cage on the floor to the side."""
    x_axis = (1.0, 0.0, 0.0)
    primitives: List[Primitive] = []
    for k in range(pipe_count):
        z = 0.6 + 0.3 * k
        primitives.append(
            Primitive("cylinder", _axis_pose((0.0, 0.8, z), x_axis), (0.05, 2.0), name=f"pipe_{k}")
        )
    primitives.append(
        Primitive("box", Pose(np.eye(3), np.array([1.6, 0.4, 0.25])), (0.4, 0.4, 0.5), name="cage")
    )
    valve_center = (-0.8, 0.6, 1.0)
    primitives.append(
        Primitive("ring", _axis_pose(valve_center, (0.0, 1.0, 0.0)), (0.15, 0.12, 0.03), name="valve_ring")
    )
    primitives.append(
        Primitive(
            "cylinder",
            _axis_pose(valve_center, (1.0, 0.0, 1.0)),
            (0.03, 0.27),
            capped=True,
            name="valve_bar",
        )
    )
    primitives.append(
        Primitive(
            "cylinder",
            _axis_pose((-0.8, 0.7, 1.0), (0.0, 1.0, 0.0)),
            (0.04, 0.2),
            capped=True,
            name="valve_stem",
        )
    )
    return primitives


# (name, workspace point, camera offset)
_REGIME_LAYOUT = (
    ("valve_grasp", (-0.8, 0.45, 1.0), (0.3, -1.2, 0.2)),
    ("valve_turn", (-0.8, 0.45, 1.1), (-0.3, -1.2, 0.3)),
    ("cage_pick", (1.6, 0.4, 0.65), (-0.3, -1.1, 0.6)),
    ("cage_place", (1.2, 0.4, 0.3), (0.0, -1.2, 0.5)),
)


def build_mockup_scene(seed: int = 0, config: Optional[SceneConfig] = None) -> DigitalTwin:
    """Build the four-regime mock-up twin.

    Args:
        seed: Seed for the surface sample
        config: Scene settings (defaults when omitted)

    Returns:
        DigitalTwin with M = 4 regimes

    Example:
        >>> twin = build_mockup_scene(0)
        >>> [r.id for r in twin.regimes]
        [0, 1, 2, 3]
    """
    config = config or SceneConfig()
    primitives = mockup_primitives(config.pipe_count)
    bare = DigitalTwin(primitives=tuple(primitives), seed=seed)
    cloud = sample_surface(bare, config.surface_density, seed=seed)

    regimes = []
    for regime_id, (name, anchor, offset) in enumerate(_REGIME_LAYOUT):
        anchor = np.asarray(anchor, dtype=float)
        # tool approaches from the camera side
        goal = look_at(anchor - np.array([0.0, 0.3, 0.0]), anchor)
        anchor_pose = Pose(goal.rotation, anchor)
        regimes.append(
            Regime(
                id=regime_id,
                name=name,
                anchor_pose=anchor_pose,
                camera_offset=np.asarray(offset, dtype=float),
                crop_radius=config.crop_radius,
                target_cloud=crop(cloud, anchor, config.crop_radius),
            )
        )

    twin = DigitalTwin(primitives=tuple(primitives), regimes=tuple(regimes), cloud=cloud, seed=seed)
    logger.info(
        f"🏭 Built mock-up twin: {len(primitives)} primitives, {len(cloud)} surface points, "
        f"{len(regimes)} regimes"
    )
    return twin
