"""
End-to-end learned registration: camera-frame cloud -> features -> pose.

RT regresses the pose directly from pooled correspondence features. The GR
variant instead scores every correspondence with a small weight head and
solves weighted Procrustes over the pairs it keeps.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.config import RegistrationConfig, TrainConfig
from src.errors import DegenerateConfiguration, EmptyCorrespondences
from src.geometry.se3 import LieVector, Pose, compose, head_vector, inverse, pose_from_head
from src.registration.features import match_features, prepare_feature_cloud
from src.registration.global_registration import ransac_register
from src.registration.icp import evaluate_registration, icp_refine
from src.registration.partitioned import RegistrationTarget
from src.registration.procrustes import procrustes_weighted
from src.registration.types import CorrespondenceSet, FeatureCloud, RegistrationResult
from src.regressor.features import FeatureInput, PooledFeature, build_features, pool
from src.regressor.mlp import MLPModel
from src.regressor.training import TrainingSet, inlier_weights
from src.scene.dataset import ViewSample

logger = logging.getLogger(__name__)

WEIGHT_THRESHOLD = 0.5


@dataclass(frozen=True)
class SampleFeatures:
    """Everything the learned methods derive from one measured cloud."""

    source: FeatureCloud
    correspondences: CorrespondenceSet
    rows: FeatureInput
    pooled: PooledFeature


def extract_features(
    points: np.ndarray,
    target: RegistrationTarget,
    config: Optional[RegistrationConfig] = None,
) -> SampleFeatures:
    """Voxelize and describe a camera-frame cloud, then match it to the target.

    Raises:
        EmptyCorrespondences: If too few points survive downsampling
    """
    config = config or RegistrationConfig()
    src = prepare_feature_cloud(points, config)
    if len(src) == 0 or len(target.features) == 0:
        raise EmptyCorrespondences(f"No correspondences: {len(src)} source and {len(target.features)} target features")
    corr = match_features(src, target.features)
    rows = build_features(src, target.features, corr)
    return SampleFeatures(src, corr, rows, pool(rows))


def forward(model: MLPModel, pf: PooledFeature) -> LieVector:
    """Network output as a LieVector in head coordinates (omega, t).

    Raises:
        DimensionMismatch: If the pooled feature does not fit the model
    """
    return LieVector.from_array(model.forward(np.asarray(pf.vector, dtype=float)))


def _finish(
    src: FeatureCloud,
    target: RegistrationTarget,
    local: Pose,
    config: RegistrationConfig,
    refine: bool,
    start: float,
) -> RegistrationResult:
    history: Tuple[float, ...] = ()
    if refine:
        refined = icp_refine(src.points, target.features.points, local, config.voxel_size, config)
        local, history = refined.pose, refined.history
    threshold = config.ransac_distance_factor * config.voxel_size
    fitness, inlier_rms = evaluate_registration(src.points, target.features.points, local, threshold)
    pose = compose(target.partition_pose, local)
    return RegistrationResult(pose, inlier_rms, fitness, time.perf_counter() - start, history)


def predict_pose(
    model: MLPModel,
    sample: SampleFeatures,
    target: RegistrationTarget,
    config: Optional[RegistrationConfig] = None,
    refine: bool = False,
) -> RegistrationResult:
    """RT: pooled features -> network -> exp -> optional ICP at cut-off 2 nu.

    Example:
        >>> sample = extract_features(view.source, target)
        >>> predict_pose(model, sample, target, refine=True).pose
    """
    config = config or RegistrationConfig()
    start = time.perf_counter()
    local = pose_from_head(model.forward(sample.pooled.vector))
    return _finish(sample.source, target, local, config, refine, start)


def predict_pose_weighted(
    weight_head: MLPModel,
    sample: SampleFeatures,
    target: RegistrationTarget,
    config: Optional[RegistrationConfig] = None,
    refine: bool = False,
    seed: int = 0,
) -> RegistrationResult:
    """GR: learned inlier weights + weighted Procrustes, RANSAC under 3 kept pairs."""
    config = config or RegistrationConfig()
    start = time.perf_counter()
    weights = expit(weight_head.forward(sample.rows.x)[:, 0])
    keep = weights >= WEIGHT_THRESHOLD
    local: Optional[Pose] = None
    if np.count_nonzero(keep) >= 3:
        kept = sample.correspondences.subset(keep).with_weights(weights[keep])
        try:
            local = procrustes_weighted(sample.source.points, target.features.points, kept)
        except DegenerateConfiguration:
            logger.warning("⚠️  Weighted Procrustes degenerate; falling back to RANSAC")
    else:
        logger.debug(f"GR kept {np.count_nonzero(keep)} pairs; falling back to RANSAC")
    if local is None:
        local = ransac_register(sample.source, target.features, config, seed=seed, corr=sample.correspondences).pose
    return _finish(sample.source, target, local, config, refine, start)


# ============================================================
# Training data
# ============================================================


def local_target(target: RegistrationTarget, pose: Pose) -> Pose:
    """Ground-truth camera pose expressed in the partition frame."""
    return compose(inverse(target.partition_pose), pose)


@dataclass
class PreparedViews:
    """Features and regression targets for a list of views."""

    indices: List[int]
    samples: List[SampleFeatures]
    data: TrainingSet
    weight_rows: np.ndarray
    weight_labels: np.ndarray


def prepare_views(
    views: Sequence[ViewSample],
    target: RegistrationTarget,
    reg_config: Optional[RegistrationConfig] = None,
    train_config: Optional[TrainConfig] = None,
    samples: Optional[Sequence[SampleFeatures]] = None,
) -> PreparedViews:
    """Extract features for every view and build its training targets.

    Views without any correspondence are skipped with a warning.

    Args:
        views: Labeled camera-frame clouds
        target: Registration target of the views' regime
        reg_config: Feature settings
        train_config: Inlier threshold and per-sample row cap
        samples: Precomputed features aligned with views
    """
    reg_config = reg_config or RegistrationConfig()
    train_config = train_config or TrainConfig()
    threshold = train_config.inlier_factor * reg_config.voxel_size
    indices, kept, X, Y, pairs, rows, labels = [], [], [], [], [], [], []
    for i, view in enumerate(views):
        if samples is not None:
            sample = samples[i]
        else:
            try:
                sample = extract_features(view.source, target, reg_config)
            except EmptyCorrespondences as e:
                logger.warning(f"⚠️  Skipping view {view.index}: {e}")
                continue
        gt = local_target(target, view.pose)
        sub = sample.rows.subsample(train_config.max_correspondences, seed=view.index)
        p, q = sub.source_points, sub.target_points
        residual = np.linalg.norm(p @ gt.rotation.T + gt.translation - q, axis=1)
        indices.append(view.index)
        kept.append(sample)
        X.append(sample.pooled.vector)
        Y.append(head_vector(gt))
        pairs.append((p, q, inlier_weights(p, q, gt.rotation, gt.translation, threshold)))
        rows.append(sub.x)
        labels.append((residual < threshold).astype(float))
    if not indices:
        raise EmptyCorrespondences("None of the views produced correspondences")
    data = TrainingSet(np.vstack(X), np.vstack(Y), pairs)
    return PreparedViews(indices, kept, data, np.vstack(rows), np.concatenate(labels))
