"""
Noise calibration, Gaussian NLL, trace metric and the conformal baseline.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import norm

from src.errors import InsufficientCalibration
from src.geometry.se3 import Covariance6, LieVector
from src.uncertainty.types import ConformalBounds, PredictiveDistribution

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def _pairs(predictions: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(predictions, dtype=float))
    gt = np.atleast_2d(np.asarray(ground_truth, dtype=float))
    if pred.shape != gt.shape:
        raise ValueError(f"Prediction shape {pred.shape} differs from ground truth {gt.shape}")
    return pred - gt


def calibrate_sigma_n(predictions: np.ndarray, ground_truth: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-output MLE noise std: sqrt(mean squared residual), at least floor.

    Raises:
        InsufficientCalibration: With fewer than 2 pairs
    """
    residual = _pairs(predictions, ground_truth)
    if len(residual) < 2:
        raise InsufficientCalibration(f"Noise calibration needs at least 2 pairs, got {len(residual)}")
    return np.maximum(np.sqrt(np.mean(residual ** 2, axis=0)), floor)


def nll(pred: PredictiveDistribution, y_gt: Union[LieVector, Sequence[float]]) -> float:
    """Gaussian negative log density of y_gt, summed over the 6 outputs."""
    y = y_gt.as_array() if isinstance(y_gt, LieVector) else np.asarray(y_gt, dtype=float)
    r = y - pred.mean.as_array()
    cov = pred.cov.matrix
    try:
        factor = cho_factor(cov, lower=True)
    except LinAlgError:
        return math.inf
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    mahalanobis = float(r @ cho_solve(factor, r))
    return 0.5 * (mahalanobis + log_det + len(r) * LOG_2PI)


def trace_metric(cov: Covariance6, translation_weight: float = 1.0) -> float:
    """tr(W Sigma) with W = diag(1, 1, 1, lambda, lambda, lambda)."""
    weights = np.array([1.0, 1.0, 1.0] + [translation_weight] * 3)
    return float(np.sum(weights * np.diag(cov.matrix)))


# ============================================================
# Conformal prediction
# ============================================================


def conformal_calibrate(predictions: np.ndarray, ground_truth: np.ndarray, miscoverage: float = 0.1) -> ConformalBounds:
    """Split-conformal bounds: the ceil((N+1)(1-m))-th smallest |residual| per output.

    Raises:
        InsufficientCalibration: With fewer than ceil(1/m) pairs
    """
    residual = np.abs(_pairs(predictions, ground_truth))
    n = len(residual)
    needed = math.ceil(1.0 / miscoverage)
    rank = math.ceil((n + 1) * (1.0 - miscoverage))
    if n < needed or rank > n:
        raise InsufficientCalibration(
            f"Conformal calibration at miscoverage {miscoverage} needs at least {max(needed, rank)} pairs, got {n}"
        )
    q = np.sort(residual, axis=0)[rank - 1]
    return ConformalBounds(q, miscoverage)


def conformal_cov(bounds: ConformalBounds, floor: float = 1e-6) -> Covariance6:
    """Gaussian-matched covariance: the bound becomes the two-sided (1-m) quantile."""
    z = norm.ppf(1.0 - bounds.miscoverage / 2.0)
    return Covariance6.diagonal(np.maximum((bounds.q / z) ** 2, floor ** 2))


def empirical_coverage(bounds: ConformalBounds, predictions: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    """Fraction of samples whose |residual| stays within the bound, per output."""
    residual = np.abs(_pairs(predictions, ground_truth))
    return np.mean(residual <= bounds.q[None, :], axis=0)


# ============================================================
# Reports
# ============================================================


def write_calibration_report(path: Union[str, Path], residuals: np.ndarray, variances: np.ndarray, nlls: Sequence[float]) -> Path:
    """CSV with one row per calibration sample: residual and predicted variance per dim, then nll."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    residuals = np.atleast_2d(residuals)
    variances = np.atleast_2d(variances)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + [f"residual_{i}" for i in range(6)] + [f"var_{i}" for i in range(6)] + ["nll"])
        for i, (r, v, value) in enumerate(zip(residuals, variances, nlls)):
            writer.writerow([i] + [repr(float(x)) for x in r] + [repr(float(x)) for x in v] + [repr(float(value))])
    return path
