"""
Pinhole depth camera, viewpoint sampling and cloud corruption.

Camera frames follow the pinhole convention: +z forward, +x right, +y down.
Rendered clouds are expressed in the camera frame, so the ground-truth
registration of a view is its camera-to-twin pose.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.config import CameraConfig, CorruptionConfig, ViewpointConfig
from src.errors import AngleNearPi, RejectionExhausted
from src.geometry.se3 import Pose, log_map, look_at, so3_exp
from src.scene.twin import DigitalTwin, Regime

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics and pose of a depth camera.

    Attributes:
        width, height: Image size in pixels
        fx, fy, cx, cy: Pinhole intrinsics in pixels
        pose: Camera-to-twin transform
        depth_noise_sigma: Range noise std along each ray (m)
        max_range: Hits beyond this distance are dropped (m)
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: Pose = field(default_factory=Pose.identity)
    depth_noise_sigma: float = 0.0
    max_range: float = 6.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"Principal point ({self.cx}, {self.cy}) outside the image")
        if self.depth_noise_sigma < 0:
            raise ValueError(f"depth_noise_sigma must be non-negative, got {self.depth_noise_sigma}")

    @classmethod
    def from_config(cls, config: CameraConfig, pose: Pose) -> "CameraModel":
        cx = config.cx if config.cx is not None else 0.5 * (config.width - 1)
        cy = config.cy if config.cy is not None else 0.5 * (config.height - 1)
        return cls(
            width=config.width,
            height=config.height,
            fx=config.fx,
            fy=config.fy,
            cx=cx,
            cy=cy,
            pose=pose,
            depth_noise_sigma=config.depth_noise_sigma,
            max_range=config.max_range,
        )

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame, one per pixel, row-major."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        dirs = np.column_stack(
            [
                (u.reshape(-1) - self.cx) / self.fx,
                (v.reshape(-1) - self.cy) / self.fy,
                np.ones(self.width * self.height),
            ]
        )
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def with_pose(self, pose: Pose) -> "CameraModel":
        return CameraModel(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            pose, self.depth_noise_sigma, self.max_range,
        )


def render_depth_cloud(
    twin: DigitalTwin,
    cam: CameraModel,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Ray-cast one ray per pixel and return the hits in the camera frame.

    Args:
        twin: Scene to render
        cam: Camera intrinsics, pose and noise model
        seed: Seed for the range noise (ignored if rng is given)
        rng: Explicit generator for the range noise

    Returns:
        (N, 3) cloud in the camera frame, empty if nothing is visible
    """
    dirs_cam = cam.ray_directions()
    dirs_world = dirs_cam @ cam.pose.rotation.T
    t = twin.intersect(cam.pose.translation, dirs_world)
    hit = np.isfinite(t) & (t <= cam.max_range)
    ranges = t[hit]
    if cam.depth_noise_sigma > 0 and len(ranges):
        rng = rng if rng is not None else np.random.default_rng(seed)
        ranges = ranges + rng.normal(0.0, cam.depth_noise_sigma, len(ranges))
    return dirs_cam[hit] * ranges[:, None]


def sample_viewpoints(
    twin: DigitalTwin,
    regime: Regime,
    n: int,
    seed: int,
    config: Optional[ViewpointConfig] = None,
) -> List[Pose]:
    """Rejection-sample camera poses around a regime's nominal camera.

    Positions are the nominal camera plus isotropic Gaussian jitter; each
    camera looks at the regime anchor, then gets a uniform rotation
    perturbation in the Lie algebra and a uniform translation perturbation.
    Candidates closer than the clearance to any primitive, or whose pose sits
    on the pi branch of the logarithm, are rejected.

    Raises:
        ValueError: If n is not positive
        RejectionExhausted: After attempts_per_view * n rejected candidates
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    config = config or ViewpointConfig()
    rng = np.random.default_rng(seed)
    poses: List[Pose] = []
    max_attempts = config.attempts_per_view * n
    attempts = 0
    near_pi = 0
    while len(poses) < n:
        if attempts >= max_attempts:
            raise RejectionExhausted(
                f"Only {len(poses)}/{n} viewpoints after {attempts} attempts for regime {regime.id}"
            )
        attempts += 1
        center = regime.nominal_camera + rng.normal(0.0, config.position_std, 3)
        delta_rot = rng.uniform(-config.rotation_perturbation, config.rotation_perturbation, 3)
        delta_pos = rng.uniform(-config.translation_perturbation, config.translation_perturbation, 3)
        position = center + delta_pos
        if float(twin.distance(position)[0]) < config.min_clearance:
            continue
        base = look_at(center, regime.anchor)
        pose = Pose(so3_exp(delta_rot) @ base.rotation, position)
        try:
            log_map(pose)
        except AngleNearPi:
            near_pi += 1
            continue
        poses.append(pose)
    if near_pi:
        logger.warning(f"⚠️  Rejected {near_pi} viewpoints on the pi branch for regime {regime.id}")
    logger.debug(f"Sampled {n} viewpoints for regime {regime.id} in {attempts} attempts")
    return poses


def corrupt_cloud(
    points: np.ndarray,
    severity: float,
    seed: Optional[int] = None,
    config: Optional[CorruptionConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Apply a rigid bias and per-point Gaussian noise scaled by severity.

    The bias direction is uniform on the sphere; its magnitude and the noise
    variance are drawn uniformly in [floor, 1] * severity * (max_bias,
    max_variance). Severity 0 returns an exact copy.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if severity == 0.0:
        return pts.copy()
    config = config or CorruptionConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    magnitude = rng.uniform(config.floor, 1.0) * severity * config.max_bias
    variance = rng.uniform(config.floor, 1.0) * severity * config.max_variance
    noise = rng.normal(0.0, np.sqrt(variance), pts.shape)
    return pts + magnitude * direction + noise
