"""
Input-dependent aleatoric correction c(x, x) on top of the GP noise floor.

Squared calibration residuals are averaged with Nadaraya-Watson weights
exp(-d^2 / 2h^2), where d is the NTK cosine distance and the bandwidth h is
the median pairwise calibration distance. The correction is the smoothed
residual variance minus sigma_n^2, clamped at zero.
"""

import dataclasses
import logging
from typing import Optional

import numpy as np

from src.regressor.features import PooledFeature
from src.uncertainty.gp import AleatoricCorrection, GPExpert
from src.uncertainty.ntk import N_OUTPUTS, HeadCache, cosine_distance_sq, ntk_diagonal

logger = logging.getLogger(__name__)

MIN_BANDWIDTH = 1e-6


def fit_aleatoric(
    expert: GPExpert,
    calibration_features: np.ndarray,
    calibration_residuals: np.ndarray,
    min_samples: int = 10,
) -> Optional[AleatoricCorrection]:
    """Cache what the correction needs from a calibration set.

    Args:
        expert: Fitted GP expert
        calibration_features: (N_c, D_in) pooled calibration inputs
        calibration_residuals: (N_c, 6) prediction minus ground truth
        min_samples: Smallest usable calibration set

    Returns:
        The correction, or None when the set is smaller than min_samples
    """
    residuals = np.atleast_2d(np.asarray(calibration_residuals, dtype=float)).reshape(-1, N_OUTPUTS)
    if len(residuals) < min_samples:
        if len(residuals):
            logger.warning(f"⚠️  {len(residuals)} calibration samples (< {min_samples}); aleatoric correction disabled")
        return None
    model = expert.model
    cache = HeadCache.from_model(model, calibration_features)
    self_kernel = ntk_diagonal(model, cache)
    bandwidth = np.empty(N_OUTPUTS)
    off_diagonal = ~np.eye(len(cache), dtype=bool)
    for k in range(N_OUTPUTS):
        d_sq = cosine_distance_sq(model, cache, cache, k, self_kernel[:, k], self_kernel[:, k])
        bandwidth[k] = max(float(np.median(np.sqrt(np.maximum(d_sq[off_diagonal], 0.0)))), MIN_BANDWIDTH)
    return AleatoricCorrection(cache, residuals ** 2, self_kernel, bandwidth)


def attach_aleatoric(expert: GPExpert, correction: Optional[AleatoricCorrection]) -> GPExpert:
    """Copy of the expert carrying the correction, with a refreshed cache hash."""
    return dataclasses.replace(expert, aleatoric=correction, cache_hash="")


def aleatoric_correction(expert: GPExpert, pf_test: PooledFeature) -> np.ndarray:
    """c(x, x) per output, shape (6,); zeros without calibration data."""
    return aleatoric_batch(expert, np.atleast_2d(np.asarray(pf_test.vector, dtype=float)))[0]


def aleatoric_batch(expert: GPExpert, X: np.ndarray) -> np.ndarray:
    """(N, 6) corrections for a batch of pooled features."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    correction = expert.aleatoric
    if correction is None:
        return np.zeros((len(X), N_OUTPUTS))
    model = expert.model
    test = HeadCache.from_model(model, X)
    test_diag = ntk_diagonal(model, test)
    out = np.empty((len(X), N_OUTPUTS))
    for k in range(N_OUTPUTS):
        d_sq = cosine_distance_sq(model, test, correction.cache, k, test_diag[:, k], correction.self_kernel[:, k])
        logits = -d_sq / (2.0 * correction.bandwidth[k] ** 2)
        # shift per row so the nearest calibration point has weight 1
        weights = np.exp(logits - logits.max(axis=1, keepdims=True))
        smoothed = weights @ correction.residual_sq[:, k] / weights.sum(axis=1)
        out[:, k] = smoothed - expert.sigma_n[k] ** 2
    return np.maximum(out, 0.0)
