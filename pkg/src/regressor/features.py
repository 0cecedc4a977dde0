"""
Correspondence feature rows and their pooled global descriptor.

Each matched pair contributes one 73-wide row
[f_P (33), f_Q (33), p (3), q (3), descriptor distance (1)]; max, mean and
sum pooling over the rows yields the 219-wide network input.
"""

from dataclasses import dataclass

import numpy as np

from src.errors import EmptyCorrespondences
from src.registration.types import FPFH_DIM, CorrespondenceSet, FeatureCloud

ROW_DIM = 2 * FPFH_DIM + 7
POOLED_DIM = 3 * ROW_DIM

# column blocks inside a feature row
SOURCE_POINT = slice(2 * FPFH_DIM, 2 * FPFH_DIM + 3)
TARGET_POINT = slice(2 * FPFH_DIM + 3, 2 * FPFH_DIM + 6)


@dataclass(frozen=True)
class FeatureInput:
    """Per-correspondence feature rows, shape (|M|, 73)."""

    x: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[1] != ROW_DIM:
            raise ValueError(f"Feature rows must be (K, {ROW_DIM}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("Feature rows contain non-finite entries")
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def source_points(self) -> np.ndarray:
        return self.x[:, SOURCE_POINT]

    @property
    def target_points(self) -> np.ndarray:
        return self.x[:, TARGET_POINT]

    def subsample(self, limit: int, seed: int = 0) -> "FeatureInput":
        """At most `limit` rows, drawn without replacement in original order."""
        if len(self) <= limit:
            return self
        keep = np.sort(np.random.default_rng(seed).choice(len(self), size=limit, replace=False))
        return FeatureInput(self.x[keep])


@dataclass(frozen=True)
class PooledFeature:
    """Concatenated max / avg / sum pools, shape (219,)."""

    vector: np.ndarray


def build_features(src: FeatureCloud, tgt: FeatureCloud, corr: CorrespondenceSet) -> FeatureInput:
    """One row per correspondence.

    Raises:
        EmptyCorrespondences: If corr has no pairs
        IndexError: If an index falls outside its cloud
    """
    if len(corr) == 0:
        raise EmptyCorrespondences("Cannot build features from 0 correspondences")
    corr.check_bounds(len(src), len(tgt))
    f_p = src.descriptors[corr.source]
    f_q = tgt.descriptors[corr.target]
    if corr.distances is not None:
        dist = corr.distances
    else:
        dist = np.linalg.norm(f_p - f_q, axis=1)
    rows = np.hstack(
        [f_p, f_q, src.points[corr.source], tgt.points[corr.target], np.asarray(dist, dtype=float)[:, None]]
    )
    return FeatureInput(rows)


def pool(fi: FeatureInput) -> PooledFeature:
    """Permutation-invariant max / mean / sum pooling over all rows."""
    x = fi.x
    return PooledFeature(np.concatenate([x.max(axis=0), x.mean(axis=0), x.sum(axis=0)]))
