"""
Point-to-point ICP refinement and alignment scoring.
"""

import logging
import time
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.config import RegistrationConfig
from src.errors import DegenerateConfiguration
from src.geometry.se3 import Pose, apply
from src.registration.procrustes import kabsch
from src.registration.types import RegistrationResult

logger = logging.getLogger(__name__)


def evaluate_registration(
    source: np.ndarray,
    target: np.ndarray,
    pose: Pose,
    threshold: float,
    tree: Optional[cKDTree] = None,
) -> Tuple[float, float]:
    """Fitness and inlier RMS of a pose.

    Returns:
        (fitness, inlier_rms): fraction of source points with a target point
        within threshold, and the RMS of those distances (0 with no inliers)
    """
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    if len(source) == 0 or len(target) == 0:
        return 0.0, 0.0
    tree = tree if tree is not None else cKDTree(target)
    dist, _ = tree.query(apply(pose, source), distance_upper_bound=threshold)
    inliers = np.isfinite(dist)
    if not np.any(inliers):
        return 0.0, 0.0
    return float(inliers.mean()), float(np.sqrt(np.mean(dist[inliers] ** 2)))


def icp_refine(
    source: np.ndarray,
    target: np.ndarray,
    initial: Pose,
    voxel_size: float,
    config: Optional[RegistrationConfig] = None,
) -> RegistrationResult:
    """Point-to-point ICP with a correspondence cut-off.

    The logged objective is the truncated RMS sqrt(mean(min(d^2, c^2))) over
    all source points, with cut-off c = icp_threshold_factor * voxel_size.
    It is non-increasing across iterations.

    Args:
        source: Cloud to align
        target: Reference cloud
        initial: Starting source-to-target pose
        voxel_size: Voxel size nu the cut-off scales with
        config: ICP settings

    Returns:
        RegistrationResult whose history holds the truncated RMS per iteration
    """
    config = config or RegistrationConfig()
    start = time.perf_counter()
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    cutoff = config.icp_threshold_factor * voxel_size
    if len(source) == 0 or len(target) == 0:
        return RegistrationResult(initial, 0.0, 0.0, time.perf_counter() - start)
    tree = cKDTree(target)
    pose = initial
    history = []

    def truncated(current: Pose):
        dist, idx = tree.query(apply(current, source), distance_upper_bound=cutoff)
        inliers = np.isfinite(dist)
        capped = np.where(inliers, dist, cutoff)
        return float(np.sqrt(np.mean(capped ** 2))), inliers, idx

    rms, inliers, idx = truncated(pose)
    history.append(rms)
    for iteration in range(config.icp_max_iterations):
        if np.count_nonzero(inliers) < 3:
            logger.debug(f"ICP stopped at iteration {iteration}: fewer than 3 inliers")
            break
        try:
            R, t = kabsch(source[inliers], target[idx[inliers]])
        except DegenerateConfiguration:
            logger.debug(f"ICP stopped at iteration {iteration}: degenerate inlier set")
            break
        candidate = Pose(R, t)
        new_rms, new_inliers, new_idx = truncated(candidate)
        if new_rms > rms:
            # rounding only; keep the previous pose
            break
        pose, inliers, idx = candidate, new_inliers, new_idx
        history.append(new_rms)
        logger.debug(f"ICP iteration {iteration}: truncated RMS {new_rms:.6f}")
        converged = rms == 0.0 or (rms - new_rms) / rms < config.icp_tolerance
        rms = new_rms
        if converged:
            break

    fitness, inlier_rms = evaluate_registration(source, target, pose, cutoff, tree)
    return RegistrationResult(pose, inlier_rms, fitness, time.perf_counter() - start, tuple(history))
