"""
Weighted rigid alignment (Kabsch/Umeyama without scale).
"""

from typing import Optional, Tuple

import numpy as np

from src.errors import DegenerateConfiguration
from src.geometry.se3 import Pose
from src.registration.types import CorrespondenceSet

# Relative singular value below which the cross-covariance loses rank.
RANK_TOLERANCE = 1e-12


def kabsch(p: np.ndarray, q: np.ndarray, weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing sum w_i |R p_i + t - q_i|^2.

    Args:
        p: (K, 3) source points
        q: (K, 3) matched target points
        weights: (K,) non-negative weights, uniform when omitted

    Returns:
        (R, t)

    Raises:
        DegenerateConfiguration: If the weights vanish or the weighted pairs
            do not span at least a line pair (cross-covariance rank < 2)
    """
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    w = np.ones(len(p)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    total = float(np.sum(w))
    if len(p) == 0 or total <= 0.0:
        raise DegenerateConfiguration(f"Total correspondence weight must be positive, got {total}")
    p_bar = w @ p / total
    q_bar = w @ q / total
    H = (p - p_bar).T @ ((q - q_bar) * w[:, None])
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0.0 or S[1] <= RANK_TOLERANCE * S[0]:
        raise DegenerateConfiguration(f"Weighted cross-covariance has rank < 2 (singular values {S})")
    d = -1.0 if np.linalg.det(Vt.T @ U.T) < 0 else 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, q_bar - R @ p_bar


def batched_kabsch(p: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unweighted Kabsch for a batch of small point sets.

    Args:
        p, q: (B, K, 3) matched point sets

    Returns:
        (R, t, ok) with R (B, 3, 3), t (B, 3) and ok flagging rank >= 2
    """
    p_bar = p.mean(axis=1, keepdims=True)
    q_bar = q.mean(axis=1, keepdims=True)
    H = np.einsum("bki,bkj->bij", p - p_bar, q - q_bar)
    U, S, Vt = np.linalg.svd(H)
    ok = (S[:, 0] > 0.0) & (S[:, 1] > RANK_TOLERANCE * S[:, 0])
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.where(np.linalg.det(V @ Ut) < 0, -1.0, 1.0)
    D = np.tile(np.eye(3), (len(p), 1, 1))
    D[:, 2, 2] = d
    R = V @ D @ Ut
    t = q_bar[:, 0, :] - np.einsum("bij,bj->bi", R, p_bar[:, 0, :])
    return R, t, ok


def procrustes_weighted(source: np.ndarray, target: np.ndarray, corr: CorrespondenceSet) -> Pose:
    """Pose minimizing the weighted squared residual over a correspondence set.

    Example:
        >>> corr = CorrespondenceSet(np.arange(4), np.arange(4))
        >>> procrustes_weighted(P, apply(T, P), corr)  # recovers T
    """
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    corr.check_bounds(len(source), len(target))
    R, t = kabsch(source[corr.source], target[corr.target], corr.weights)
    return Pose(R, t)


def weighted_residual(source: np.ndarray, target: np.ndarray, corr: CorrespondenceSet, pose: Pose) -> float:
    """sum w_i |R p_i + t - q_i|^2."""
    p = np.asarray(source, dtype=float)[corr.source]
    q = np.asarray(target, dtype=float)[corr.target]
    r = p @ pose.rotation.T + pose.translation - q
    return float(np.sum(corr.weights * np.sum(r * r, axis=1)))
