"""
Feature-based global registration: RANSAC (RG) and fast global
registration (FG).

Both take prepared FeatureClouds and return a source-to-target pose without
any initial guess.
"""

import logging
import math
import time
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.config import RegistrationConfig
from src.errors import DegenerateConfiguration, NoHypothesisFound
from src.geometry.se3 import Pose
from src.registration.features import match_features, mutual_filter
from src.registration.icp import evaluate_registration
from src.registration.procrustes import batched_kabsch, kabsch
from src.registration.types import CorrespondenceSet, FeatureCloud, RegistrationResult

logger = logging.getLogger(__name__)

# Cap on (hypotheses x correspondences) evaluated per RANSAC batch.
_BATCH_ELEMENTS = 2_000_000


# ============================================================
# RANSAC
# ============================================================


def _edge_consistent(p: np.ndarray, q: np.ndarray, ratio: float) -> np.ndarray:
    """Edge-length similarity check on sampled triangles, p and q are (B, 3, 3)."""
    ok = np.ones(len(p), dtype=bool)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        dp = np.linalg.norm(p[:, a] - p[:, b], axis=1)
        dq = np.linalg.norm(q[:, a] - q[:, b], axis=1)
        ok &= (dp >= dq * ratio) & (dq >= dp * ratio)
    return ok


def ransac_register(
    src: FeatureCloud,
    tgt: FeatureCloud,
    config: Optional[RegistrationConfig] = None,
    seed: int = 0,
    corr: Optional[CorrespondenceSet] = None,
) -> RegistrationResult:
    """Three-point RANSAC over feature correspondences.

    Hypotheses are drawn in batches; each passes an edge-length consistency
    check and a distance check on its own samples before being scored by
    inlier count. Sampling stops once the confidence-derived iteration bound
    for the best inlier ratio is reached. The winner is refit on its inliers.

    Args:
        src: Source feature cloud
        tgt: Target feature cloud
        config: Iterations, threshold and checker settings
        seed: Sampling seed
        corr: Precomputed correspondences (feature matching when omitted)

    Raises:
        NoHypothesisFound: If no hypothesis gathers at least 3 inliers
    """
    config = config or RegistrationConfig()
    start = time.perf_counter()
    if len(src) < 3 or len(tgt) < 3:
        raise NoHypothesisFound(f"RANSAC needs at least 3 points per cloud, got {len(src)} and {len(tgt)}")
    corr = corr if corr is not None else match_features(src, tgt)
    p_all = src.points[corr.source]
    q_all = tgt.points[corr.target]
    n = len(corr)
    if n < 3:
        raise NoHypothesisFound(f"RANSAC needs at least 3 correspondences, got {n}")
    threshold = config.ransac_distance_factor * config.voxel_size
    rng = np.random.default_rng(seed)
    batch = max(1, min(config.ransac_batch, _BATCH_ELEMENTS // n))

    best_count = 0
    best_rms = math.inf
    best_pose: Optional[Pose] = None
    best_mask: Optional[np.ndarray] = None
    iterations = 0
    limit = config.ransac_iterations
    while iterations < limit:
        size = min(batch, limit - iterations)
        iterations += size
        sample = rng.integers(0, n, size=(size, 3))
        distinct = (sample[:, 0] != sample[:, 1]) & (sample[:, 0] != sample[:, 2]) & (sample[:, 1] != sample[:, 2])
        sample = sample[distinct]
        p = p_all[sample]
        q = q_all[sample]
        keep = _edge_consistent(p, q, config.ransac_edge_ratio)
        if not np.any(keep):
            continue
        R, t, ok = batched_kabsch(p[keep], q[keep])
        moved = np.einsum("bij,bkj->bki", R, p[keep]) + t[:, None, :]
        ok &= np.all(np.linalg.norm(moved - q[keep], axis=2) <= threshold, axis=1)
        if not np.any(ok):
            continue
        R, t = R[ok], t[ok]
        residual = np.linalg.norm(np.einsum("bij,nj->bni", R, p_all) + t[:, None, :] - q_all, axis=2)
        inliers = residual < threshold
        counts = inliers.sum(axis=1)
        sq = np.where(inliers, residual ** 2, 0.0).sum(axis=1)
        rms = np.sqrt(sq / np.maximum(counts, 1))
        # most inliers first, then lowest RMS, then earliest hypothesis
        order = np.lexsort((np.arange(len(counts)), rms, -counts))
        top = int(order[0])
        if counts[top] > best_count or (counts[top] == best_count and rms[top] < best_rms):
            best_count = int(counts[top])
            best_rms = float(rms[top])
            best_pose = Pose(R[top], t[top])
            best_mask = inliers[top]
            ratio = best_count / n
            if ratio >= 1.0:
                limit = iterations
            elif ratio > 0.0:
                bound = math.log(1.0 - config.ransac_confidence) / math.log(1.0 - ratio ** 3)
                limit = min(limit, max(iterations, int(math.ceil(bound))))
    if best_pose is None or best_count < 3:
        raise NoHypothesisFound(f"No RANSAC hypothesis with 3+ inliers after {iterations} samples")
    logger.debug(f"RANSAC: {best_count}/{n} inliers after {iterations} samples")

    try:
        R, t = kabsch(p_all[best_mask], q_all[best_mask])
        pose = Pose(R, t)
    except DegenerateConfiguration:
        pose = best_pose
    fitness, inlier_rms = evaluate_registration(src.points, tgt.points, pose, threshold)
    return RegistrationResult(pose, inlier_rms, fitness, time.perf_counter() - start)


# ============================================================
# Fast global registration
# ============================================================


def tuple_filter(
    src: FeatureCloud,
    tgt: FeatureCloud,
    corr: CorrespondenceSet,
    seed: int = 0,
    scale: float = 0.95,
    max_tuples: int = 1000,
) -> CorrespondenceSet:
    """Keep correspondences that appear in geometrically consistent random triples."""
    n = len(corr)
    if n < 3:
        return corr
    rng = np.random.default_rng(seed)
    keep = np.zeros(n, dtype=bool)
    accepted = 0
    trials = n * 100
    while trials > 0 and accepted < max_tuples:
        size = min(trials, 10_000)
        trials -= size
        triples = rng.integers(0, n, size=(size, 3))
        distinct = (triples[:, 0] != triples[:, 1]) & (triples[:, 0] != triples[:, 2]) & (triples[:, 1] != triples[:, 2])
        triples = triples[distinct]
        p = src.points[corr.source[triples]]
        q = tgt.points[corr.target[triples]]
        ok = np.ones(len(triples), dtype=bool)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            dp = np.linalg.norm(p[:, a] - p[:, b], axis=1)
            dq = np.linalg.norm(q[:, a] - q[:, b], axis=1)
            ok &= (dp * scale < dq) & (dq < dp / scale)
        passed = triples[ok][: max_tuples - accepted]
        keep[passed.reshape(-1)] = True
        accepted += len(passed)
    if np.count_nonzero(keep) < 3:
        return corr
    return corr.subset(keep)


def geman_mcclure(residual_sq: np.ndarray, mu: float) -> np.ndarray:
    """rho_mu(e) = mu e^2 / (mu + e^2)."""
    return mu * residual_sq / (mu + residual_sq)


def fgr_optimize(
    source: np.ndarray,
    target: np.ndarray,
    corr: CorrespondenceSet,
    iterations: int = 64,
    mu_start: Optional[float] = None,
    mu_min: float = 0.025 ** 2,
    division_factor: float = 1.4,
) -> Tuple[Pose, np.ndarray, List[float]]:
    """Geman-McClure IRLS with graduated non-convexity.

    Each iteration sets line-process weights w = (mu / (mu + e^2))^2 from the
    current residuals and solves the weighted Procrustes problem exactly.
    Every fourth iteration mu is divided by division_factor while it stays
    above mu_min. The objective sum rho_mu(e) is recorded after each update.

    Args:
        source, target: Clouds the correspondence indices refer to
        corr: Correspondences to optimize over
        iterations: IRLS iterations
        mu_start: Initial mu (squared target diameter when omitted)
        mu_min: Floor for graduated non-convexity
        division_factor: mu decrease factor

    Returns:
        (pose, final weights in [0, 1], objective history)
    """
    p = np.asarray(source, dtype=float)[corr.source]
    q = np.asarray(target, dtype=float)[corr.target]
    if mu_start is None:
        extent = np.ptp(np.asarray(target, dtype=float), axis=0) if len(target) else np.zeros(3)
        mu_start = max(float(np.sum(extent ** 2)), mu_min)
    mu = mu_start
    R, t = np.eye(3), np.zeros(3)
    residual_sq = np.sum((p - q) ** 2, axis=1)
    weights = np.ones(len(p))
    history: List[float] = []
    for iteration in range(iterations):
        if iteration > 0 and iteration % 4 == 0 and mu > mu_min:
            mu = max(mu / division_factor, mu_min)
        weights = (mu / (mu + residual_sq)) ** 2
        try:
            R_new, t_new = kabsch(p, q, weights)
        except DegenerateConfiguration:
            logger.debug(f"FGR stopped at iteration {iteration}: degenerate weights")
            break
        new_sq = np.sum((p @ R_new.T + t_new - q) ** 2, axis=1)
        objective = float(np.sum(geman_mcclure(new_sq, mu)))
        if history and objective > history[-1]:
            break
        R, t, residual_sq = R_new, t_new, new_sq
        history.append(objective)
    weights = (mu / (mu + residual_sq)) ** 2
    logger.debug(f"FGR: {len(history)} iterations, final mu {mu:.3e}")
    return Pose(R, t), weights, history


def fast_register(
    src: FeatureCloud,
    tgt: FeatureCloud,
    config: Optional[RegistrationConfig] = None,
    seed: int = 0,
) -> RegistrationResult:
    """Fast global registration on mutual, tuple-tested feature matches.

    Never raises on hard inputs: with too few correspondences it returns the
    identity with zero fitness.
    """
    config = config or RegistrationConfig()
    start = time.perf_counter()
    threshold = config.ransac_distance_factor * config.voxel_size
    if len(src) == 0 or len(tgt) == 0:
        return RegistrationResult(Pose.identity(), 0.0, 0.0, time.perf_counter() - start)
    corr = mutual_filter(src, tgt, match_features(src, tgt))
    if config.fgr_tuple_test:
        corr = tuple_filter(src, tgt, corr, seed=seed)
    if len(corr) < 3:
        logger.debug(f"FGR: only {len(corr)} correspondences, returning identity")
        return RegistrationResult(Pose.identity(), 0.0, 0.0, time.perf_counter() - start)
    pose, _, history = fgr_optimize(
        src.points,
        tgt.points,
        corr,
        iterations=config.fgr_iterations,
        mu_min=config.fgr_max_correspondence_distance ** 2,
        division_factor=config.fgr_division_factor,
    )
    fitness, inlier_rms = evaluate_registration(src.points, tgt.points, pose, threshold)
    return RegistrationResult(pose, inlier_rms, fitness, time.perf_counter() - start, tuple(history))
