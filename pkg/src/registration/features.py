"""
Point cloud preprocessing: voxel downsampling, normals, FPFH descriptors and
descriptor matching.

FPFH follows the reference formulation: per-point simplified histograms over
a hybrid radius/KNN neighborhood, re-aggregated with inverse squared distance
weights and normalized to 100 per feature triple, plus the point's own
histogram.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from src.config import RegistrationConfig
from src.errors import DegenerateNeighborhood
from src.registration.types import FPFH_DIM, CorrespondenceSet, FeatureCloud

logger = logging.getLogger(__name__)

FPFH_BINS = 11
# Second covariance eigenvalue below this fraction of the largest marks a
# neighborhood with rank < 2.
RANK_TOLERANCE = 1e-10


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """One centroid per occupied voxel, ordered by voxel index.

    Raises:
        ValueError: If voxel_size is not positive
    """
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    keys = np.floor(pts / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    return sums / counts[:, None]


def estimate_normals(
    points: np.ndarray,
    k: int = 20,
    viewpoint: Sequence[float] = (0.0, 0.0, 0.0),
    strict: bool = False,
) -> np.ndarray:
    """Unit normals from the smallest eigenvector of each k-neighborhood.

    Normals are oriented so that dot(normal, point - viewpoint) <= 0.

    Args:
        points: (N, 3) cloud with N > k
        k: Neighbors per point, the point itself included
        viewpoint: Sensor origin used for orientation
        strict: Raise on rank-deficient neighborhoods instead of warning

    Raises:
        ValueError: If the cloud has no more than k points
        DegenerateNeighborhood: With strict=True, when a neighborhood has rank < 2
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) <= k:
        raise ValueError(f"Need more than k={k} points to estimate normals, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=k)
    neighbors = pts[idx]
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]

    degenerate = eigvals[:, 1] <= RANK_TOLERANCE * np.maximum(eigvals[:, 2], np.finfo(float).tiny)
    if np.any(degenerate):
        if strict:
            first = int(np.flatnonzero(degenerate)[0])
            raise DegenerateNeighborhood(
                f"{int(degenerate.sum())} neighborhoods have rank < 2 (first at point {first})"
            )
        logger.warning(f"⚠️  {int(degenerate.sum())} rank-deficient neighborhoods; normals there are arbitrary")

    flip = np.einsum("ij,ij->i", normals, pts - np.asarray(viewpoint, dtype=float)) > 0
    normals[flip] *= -1.0
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


# ============================================================
# FPFH
# ============================================================


def pair_features(p1: np.ndarray, n1: np.ndarray, p2: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Darboux-frame pair features (f1, f2, f3, f4) for arrays of point pairs.

    The frame is anchored at whichever endpoint sees the connecting line at
    the smaller angle, which makes the features symmetric in the pair.
    """
    dp = p2 - p1
    f4 = np.linalg.norm(dp, axis=1)
    out = np.zeros((len(dp), 4))
    valid = f4 > 0
    safe_f4 = np.where(valid, f4, 1.0)
    angle1 = np.einsum("ij,ij->i", n1, dp) / safe_f4
    angle2 = np.einsum("ij,ij->i", n2, dp) / safe_f4
    swap = np.arccos(np.clip(np.abs(angle1), 0.0, 1.0)) > np.arccos(np.clip(np.abs(angle2), 0.0, 1.0))

    u = np.where(swap[:, None], n2, n1)
    other = np.where(swap[:, None], n1, n2)
    dp = np.where(swap[:, None], -dp, dp)
    f3 = np.where(swap, -angle2, angle1)

    v = np.cross(dp, u)
    v_norm = np.linalg.norm(v, axis=1)
    valid &= v_norm > 0
    v = v / np.where(v_norm > 0, v_norm, 1.0)[:, None]
    w = np.cross(u, v)
    f2 = np.einsum("ij,ij->i", v, other)
    f1 = np.arctan2(np.einsum("ij,ij->i", w, other), np.einsum("ij,ij->i", u, other))

    out[valid, 0] = f1[valid]
    out[valid, 1] = f2[valid]
    out[valid, 2] = f3[valid]
    out[valid, 3] = f4[valid]
    return out


def _bin(values: np.ndarray, low: float, high: float) -> np.ndarray:
    idx = np.floor(FPFH_BINS * (values - low) / (high - low)).astype(np.int64)
    return np.clip(idx, 0, FPFH_BINS - 1)


def compute_fpfh(
    points: np.ndarray,
    normals: np.ndarray,
    radius: float,
    max_nn: int = 100,
) -> np.ndarray:
    """33-bin FPFH descriptors.

    Args:
        points: (N, 3) cloud
        normals: (N, 3) unit normals
        radius: Neighborhood radius (m)
        max_nn: Neighborhood size cap, the point itself included

    Returns:
        (N, 33) descriptors; each 11-bin triple sums to 200 for points with
        neighbors and the whole row is zero for isolated points
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    nrm = np.asarray(normals, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return np.zeros((0, FPFH_DIM))
    k = min(max_nn, n)
    dist, idx = cKDTree(pts).query(pts, k=k, distance_upper_bound=radius)
    dist = dist.reshape(n, k)
    idx = idx.reshape(n, k)
    rows = np.repeat(np.arange(n), k)
    cols = idx.reshape(-1)
    d2 = dist.reshape(-1) ** 2
    keep = (cols < n) & (cols != rows)
    rows, cols, d2 = rows[keep], cols[keep], d2[keep]

    # simplified point feature histograms
    feats = pair_features(pts[rows], nrm[rows], pts[cols], nrm[cols])
    counts = np.bincount(rows, minlength=n)
    incr = np.where(counts > 0, 100.0 / np.maximum(counts, 1), 0.0)[rows]
    spfh = np.zeros(n * FPFH_DIM)
    np.add.at(spfh, rows * FPFH_DIM + _bin(feats[:, 0], -np.pi, np.pi), incr)
    np.add.at(spfh, rows * FPFH_DIM + FPFH_BINS + _bin(feats[:, 1], -1.0, 1.0), incr)
    np.add.at(spfh, rows * FPFH_DIM + 2 * FPFH_BINS + _bin(feats[:, 2], -1.0, 1.0), incr)
    spfh = spfh.reshape(n, FPFH_DIM)

    # distance-weighted re-aggregation
    nonzero = d2 > 0
    weights = sparse.csr_matrix((1.0 / d2[nonzero], (rows[nonzero], cols[nonzero])), shape=(n, n))
    aggregated = np.asarray(weights @ spfh)
    sums = aggregated.reshape(n, 3, FPFH_BINS).sum(axis=2)
    scale = np.where(sums != 0, 100.0 / np.where(sums != 0, sums, 1.0), 0.0)
    fpfh = (aggregated.reshape(n, 3, FPFH_BINS) * scale[:, :, None]).reshape(n, FPFH_DIM) + spfh
    fpfh[counts == 0] = 0.0
    return fpfh


def prepare_feature_cloud(
    points: np.ndarray,
    config: Optional[RegistrationConfig] = None,
    viewpoint: Sequence[float] = (0.0, 0.0, 0.0),
) -> FeatureCloud:
    """Voxelize, estimate normals and compute FPFH in one step."""
    config = config or RegistrationConfig()
    down = voxel_downsample(points, config.voxel_size)
    if len(down) <= config.normal_k:
        logger.warning(f"⚠️  Only {len(down)} points after downsampling; returning an empty feature cloud")
        return FeatureCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, FPFH_DIM)))
    normals = estimate_normals(down, config.normal_k, viewpoint)
    descriptors = compute_fpfh(down, normals, config.fpfh_radius_factor * config.voxel_size, config.fpfh_max_nn)
    return FeatureCloud(down, normals, descriptors)


# ============================================================
# Matching
# ============================================================


def _nearest_descriptors(query: np.ndarray, reference: np.ndarray, candidates: int = 8):
    """Exact nearest reference row per query row, ties to the lowest index."""
    k = min(candidates, len(reference))
    _, cand = cKDTree(reference).query(query, k=k)
    cand = cand.reshape(len(query), k)
    d2 = np.sum((query[:, None, :] - reference[cand]) ** 2, axis=2)
    best_d2 = d2.min(axis=1)
    # lowest index among exact ties
    tied = np.where(d2 == best_d2[:, None], cand, np.iinfo(np.int64).max)
    best = tied.min(axis=1)
    # all k candidates tied: the tree may have skipped a lower tied index
    saturated = np.flatnonzero((d2[:, -1] == best_d2) & (k < len(reference)))
    for i in saturated:
        full = np.sum((reference - query[i]) ** 2, axis=1)
        best[i] = int(np.argmin(full))
        best_d2[i] = full[best[i]]
    return best, best_d2


def match_features(src: FeatureCloud, tgt: FeatureCloud) -> CorrespondenceSet:
    """Nearest target descriptor for every source point.

    Raises:
        ValueError: If either cloud is empty
    """
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError(f"match_features needs non-empty clouds, got {len(src)} and {len(tgt)}")
    best, best_d2 = _nearest_descriptors(src.descriptors, tgt.descriptors)
    return CorrespondenceSet(np.arange(len(src)), best, distances=np.sqrt(best_d2))


def mutual_filter(src: FeatureCloud, tgt: FeatureCloud, corr: CorrespondenceSet) -> CorrespondenceSet:
    """Keep pairs that are also nearest neighbors from the target side."""
    back, _ = _nearest_descriptors(tgt.descriptors, src.descriptors)
    mask = back[corr.target] == corr.source
    return corr.subset(mask)
