"""
Registration against a regime partition of the digital twin (RP, FP) or
against the whole twin (RG, FG).

Target normals are oriented toward the regime's nominal camera in both
cases, so the only difference between the two is the extent of the target.
"""

import logging
import time
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from src.config import RegistrationConfig
from src.geometry.se3 import Pose, compose
from src.registration.features import prepare_feature_cloud
from src.registration.global_registration import fast_register, ransac_register
from src.registration.icp import icp_refine
from src.registration.types import FeatureCloud, RegistrationResult
from src.scene.twin import DigitalTwin, crop

logger = logging.getLogger(__name__)

Method = Literal["ransac", "fgr"]


@dataclass(frozen=True)
class RegistrationTarget:
    """Prepared target for one regime.

    Attributes:
        regime_id: Regime the target belongs to
        features: Voxelized target with normals and FPFH
        partition_pose: Partition-to-twin transform
        partitioned: False when the target is the full twin
    """

    regime_id: int
    features: FeatureCloud
    partition_pose: Pose
    partitioned: bool


def prepare_target(
    twin: DigitalTwin,
    regime_id: int,
    config: Optional[RegistrationConfig] = None,
    partitioned: bool = True,
    crop_radius: Optional[float] = None,
) -> RegistrationTarget:
    """Build the feature cloud to register against.

    Args:
        twin: Digital twin
        regime_id: Regime whose partition (or viewpoint) is used
        config: Registration settings
        partitioned: Use the regime target cloud instead of the full twin
        crop_radius: Re-crop the twin with this radius instead of using the
            stored target (inf gives the full twin)

    Raises:
        UnknownRegime: If the regime does not exist
    """
    config = config or RegistrationConfig()
    regime = twin.regime(regime_id)
    if not partitioned:
        cloud = twin.cloud
    elif crop_radius is not None:
        cloud = crop(twin.cloud, regime.anchor, crop_radius)
    else:
        cloud = regime.target_cloud
    features = prepare_feature_cloud(cloud, config, viewpoint=regime.nominal_camera)
    # partitions are cut from the twin in place
    return RegistrationTarget(regime_id, features, Pose.identity(), partitioned)


def register_to_target(
    src: FeatureCloud,
    target: RegistrationTarget,
    method: Method = "ransac",
    config: Optional[RegistrationConfig] = None,
    seed: int = 0,
    refine: bool = False,
) -> RegistrationResult:
    """Run a global method against a prepared target and express the pose in the twin frame."""
    config = config or RegistrationConfig()
    start = time.perf_counter()
    if method == "ransac":
        local = ransac_register(src, target.features, config, seed=seed)
    elif method == "fgr":
        local = fast_register(src, target.features, config, seed=seed)
    else:
        raise ValueError(f"Unknown registration method: {method}")
    if refine:
        local = icp_refine(src.points, target.features.points, local.pose, config.voxel_size, config)
    pose = compose(target.partition_pose, local.pose)
    return RegistrationResult(pose, local.inlier_rms, local.fitness, time.perf_counter() - start, local.history)


def partitioned_register(
    twin: DigitalTwin,
    regime_id: int,
    source: np.ndarray,
    method: Method = "ransac",
    config: Optional[RegistrationConfig] = None,
    seed: int = 0,
    partitioned: bool = True,
    refine: bool = False,
    target: Optional[RegistrationTarget] = None,
) -> RegistrationResult:
    """Localize a camera-frame cloud in the twin frame.

    Args:
        twin: Digital twin
        regime_id: Active regime
        source: Cloud in the camera frame
        method: "ransac" (RG/RP) or "fgr" (FG/FP)
        config: Registration settings
        seed: RANSAC/tuple sampling seed
        partitioned: Register against the regime partition (RP/FP) rather
            than the full twin (RG/FG)
        refine: Follow with ICP at cut-off 2 nu
        target: Prepared target to reuse across calls

    Raises:
        UnknownRegime: If the regime does not exist
        NoHypothesisFound: Propagated from RANSAC
    """
    config = config or RegistrationConfig()
    twin.regime(regime_id)
    if target is None:
        target = prepare_target(twin, regime_id, config, partitioned)
    src = prepare_feature_cloud(source, config)
    return register_to_target(src, target, method, config, seed=seed, refine=refine)
