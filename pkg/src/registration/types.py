"""
Value types shared by the registration algorithms.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from src.geometry.se3 import Pose

FPFH_DIM = 33


@dataclass(frozen=True)
class FeatureCloud:
    """Points with unit normals and 33-D FPFH descriptors.

    Attributes:
        points: (N, 3) coordinates
        normals: (N, 3) unit normals
        descriptors: (N, 33) non-negative histograms
    """

    points: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    descriptors: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        descriptors = np.asarray(self.descriptors, dtype=float).reshape(-1, FPFH_DIM)
        if not len(points) == len(normals) == len(descriptors):
            raise ValueError(
                f"FeatureCloud counts differ: {len(points)} points, {len(normals)} normals, "
                f"{len(descriptors)} descriptors"
            )
        if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-6:
            raise ValueError("FeatureCloud normals must be unit length")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "descriptors", descriptors)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Source/target index pairs with weights in [0, 1].

    Attributes:
        source: (K,) source indices
        target: (K,) target indices
        weights: (K,) pair weights
        distances: (K,) descriptor distances, when produced by feature matching
    """

    source: np.ndarray
    target: np.ndarray
    weights: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        source = np.asarray(self.source, dtype=np.int64).reshape(-1)
        target = np.asarray(self.target, dtype=np.int64).reshape(-1)
        if len(source) != len(target):
            raise ValueError(f"Correspondence index lengths differ: {len(source)} vs {len(target)}")
        weights = np.ones(len(source)) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if len(weights) != len(source):
            raise ValueError(f"Expected {len(source)} weights, got {len(weights)}")
        if len(weights) and (np.min(weights) < 0.0 or np.max(weights) > 1.0):
            raise ValueError("Correspondence weights must lie in [0, 1]")
        if (len(source) and np.min(source) < 0) or (len(target) and np.min(target) < 0):
            raise ValueError("Correspondence indices must be non-negative")
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "weights", weights)
        if self.distances is not None:
            object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float).reshape(-1))

    def __len__(self) -> int:
        return len(self.source)

    def check_bounds(self, n_source: int, n_target: int) -> None:
        if len(self) and (np.max(self.source) >= n_source or np.max(self.target) >= n_target):
            raise ValueError(
                f"Correspondence index out of range for clouds of size {n_source} and {n_target}"
            )

    def subset(self, mask: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.source[mask],
            self.target[mask],
            self.weights[mask],
            None if self.distances is None else self.distances[mask],
        )

    def with_weights(self, weights: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(self.source, self.target, weights, self.distances)


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one registration.

    Attributes:
        pose: Source-to-target transform
        inlier_rms: RMS of inlier residuals (m)
        fitness: Inlier fraction of the source cloud
        runtime: Wall-clock seconds
        history: Per-iteration objective (ICP truncated RMS, FGR objective)
    """

    pose: Pose
    inlier_rms: float
    fitness: float
    runtime: float = 0.0
    history: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.fitness <= 1.0:
            raise ValueError(f"fitness must lie in [0, 1], got {self.fitness}")
        if self.runtime < 0:
            raise ValueError(f"runtime must be non-negative, got {self.runtime}")

    def with_runtime(self, runtime: float) -> "RegistrationResult":
        return RegistrationResult(self.pose, self.inlier_rms, self.fitness, runtime, self.history)

    def to_dict(self) -> Dict:
        return {
            "pose": self.pose.to_list(),
            "inlier_rms": float(self.inlier_rms),
            "fitness": float(self.fitness),
            "runtime_s": float(self.runtime),
        }
