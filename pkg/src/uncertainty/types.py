"""
Value types of the uncertainty estimators.

All means and covariances are in head coordinates (omega, t).
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from src.errors import InvalidEvidence
from src.geometry.se3 import Covariance6, LieVector


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: LieVector
    cov: Covariance6

    @property
    def variances(self) -> np.ndarray:
        return self.cov.variances()

    def to_dict(self) -> Dict:
        return {"mean": self.mean.to_list(), "variances": self.variances.tolist()}


@dataclass(frozen=True)
class NIGParams:
    """Normal-Inverse-Gamma parameters per output (mu, v, a, b).

    Raises:
        InvalidEvidence: Unless v > 0, a > 1 and b > 0 everywhere
    """

    mu: np.ndarray
    v: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mu", "v", "a", "b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if not len(self.mu) == len(self.v) == len(self.a) == len(self.b):
            raise InvalidEvidence("NIG parameter vectors differ in length")
        if np.any(self.v <= 0):
            raise InvalidEvidence(f"NIG v must be positive, got {self.v}")
        if np.any(self.a <= 1):
            raise InvalidEvidence(f"NIG a must exceed 1 for a finite variance, got {self.a}")
        if np.any(self.b <= 0):
            raise InvalidEvidence(f"NIG b must be positive, got {self.b}")

    @property
    def aleatoric(self) -> np.ndarray:
        return self.b / (self.a - 1.0)

    @property
    def epistemic(self) -> np.ndarray:
        return self.b / (self.v * (self.a - 1.0))


@dataclass(frozen=True)
class ConformalBounds:
    """Per-output absolute-residual quantiles at miscoverage m."""

    q: np.ndarray
    miscoverage: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))
        if np.any(self.q < 0):
            raise ValueError(f"Conformal quantiles must be non-negative, got {self.q}")
        if not 0.0 < self.miscoverage < 1.0:
            raise ValueError(f"Miscoverage must lie in (0, 1), got {self.miscoverage}")
