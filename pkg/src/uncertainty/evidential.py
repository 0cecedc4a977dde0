"""
Deep evidential regression baseline (EL).

The regressor's last layer is widened to 24 outputs holding, per head
coordinate, a Normal-Inverse-Gamma distribution (mu, v, a, b) with
v = softplus(.), a = 1 + softplus(.), b = softplus(.). Training minimizes the
NIG negative log-likelihood plus lambda |y - mu| (2v + a) in standardized
target units.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import digamma, expit, gammaln

from src.config import TrainConfig
from src.geometry.se3 import Covariance6, LieVector
from src.regressor.checkpoint import load_model, save_model
from src.regressor.features import PooledFeature
from src.regressor.mlp import MLPModel
from src.regressor.training import TrainingSet, TrainResult, fit_sgd, fit_standardization
from src.uncertainty.types import NIGParams, PredictiveDistribution

logger = logging.getLogger(__name__)

N_OUTPUTS = 6
EVIDENCE_EPS = 1e-6


def evidential_predict(nig: NIGParams) -> PredictiveDistribution:
    """Mean mu and variance b (1 + v) / (v (a - 1)) per output."""
    variance = nig.b * (1.0 + nig.v) / (nig.v * (nig.a - 1.0))
    return PredictiveDistribution(LieVector.from_array(nig.mu), Covariance6.diagonal(variance))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def split_outputs(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(gamma, v, a, b) from the 24 raw outputs of a batch."""
    raw = np.atleast_2d(raw)
    gamma = raw[:, :N_OUTPUTS]
    v = _softplus(raw[:, N_OUTPUTS : 2 * N_OUTPUTS]) + EVIDENCE_EPS
    a = 1.0 + _softplus(raw[:, 2 * N_OUTPUTS : 3 * N_OUTPUTS]) + EVIDENCE_EPS
    b = _softplus(raw[:, 3 * N_OUTPUTS :]) + EVIDENCE_EPS
    return gamma, v, a, b


def evidential_loss(raw: np.ndarray, y: np.ndarray, lam: float = 0.01) -> Tuple[float, np.ndarray]:
    """Batch-mean NIG NLL + lambda regularizer and its gradient w.r.t. the raw outputs.

    Args:
        raw: (B, 24) network outputs
        y: (B, 6) standardized targets
        lam: Evidence regularizer weight
    """
    raw = np.atleast_2d(raw)
    gamma, v, a, b = split_outputs(raw)
    r = y - gamma
    omega = 2.0 * b * (1.0 + v)
    denom = r * r * v + omega
    nll = (
        0.5 * np.log(np.pi / v)
        - a * np.log(omega)
        + (a + 0.5) * np.log(denom)
        + gammaln(a)
        - gammaln(a + 0.5)
    )
    reg = np.abs(r) * (2.0 * v + a)
    batch = len(raw)
    loss = float(np.sum(nll + lam * reg)) / batch

    d_gamma = -(a + 0.5) * 2.0 * r * v / denom - lam * np.sign(r) * (2.0 * v + a)
    d_v = -0.5 / v - a * 2.0 * b / omega + (a + 0.5) * (r * r + 2.0 * b) / denom + lam * 2.0 * np.abs(r)
    d_a = -np.log(omega) + np.log(denom) + digamma(a) - digamma(a + 0.5) + lam * np.abs(r)
    d_b = -a / b + (a + 0.5) * 2.0 * (1.0 + v) / denom
    grad = np.concatenate(
        [
            d_gamma,
            d_v * expit(raw[:, N_OUTPUTS : 2 * N_OUTPUTS]),
            d_a * expit(raw[:, 2 * N_OUTPUTS : 3 * N_OUTPUTS]),
            d_b * expit(raw[:, 3 * N_OUTPUTS :]),
        ],
        axis=1,
    )
    return loss, grad / batch


@dataclass
class EvidentialModel:
    """NIG network with the target standardization it was trained under."""

    network: MLPModel
    target_shift: np.ndarray
    target_scale: np.ndarray

    def nig_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        gamma, v, a, b = split_outputs(self.network.forward(np.atleast_2d(X)))
        return self.target_shift + self.target_scale * gamma, v, a, b * self.target_scale ** 2

    def nig(self, pf: PooledFeature) -> NIGParams:
        mu, v, a, b = self.nig_batch(np.asarray(pf.vector, dtype=float))
        return NIGParams(mu[0], v[0], a[0], b[0])

    def predict(self, pf: PooledFeature) -> PredictiveDistribution:
        return evidential_predict(self.nig(pf))

    def save(self, path: Union[str, Path], config_hash: str = "") -> Path:
        extra = {"target_shift": self.target_shift.tolist(), "target_scale": self.target_scale.tolist()}
        return save_model(path, self.network, config_hash, kind="evidential", extra=extra)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvidentialModel":
        network, header = load_model(path)
        extra = header.get("extra", {})
        return cls(network, np.asarray(extra["target_shift"], dtype=float), np.asarray(extra["target_scale"], dtype=float))


def train_evidential(
    data: TrainingSet,
    cfg: Optional[TrainConfig] = None,
    validation: Optional[TrainingSet] = None,
) -> Tuple[EvidentialModel, TrainResult]:
    """Train the EL baseline with the regressor's architecture and a 24-wide head."""
    cfg = cfg or TrainConfig()
    sizes = (data.X.shape[1], *cfg.hidden_sizes, 4 * N_OUTPUTS)
    network = MLPModel.initialize(sizes, seed=cfg.seed)
    fit_standardization(network, data.X)
    shift = data.Y.mean(axis=0)
    std = data.Y.std(axis=0)
    scale = np.where(std > 1e-8, std, 1.0)
    model = EvidentialModel(network, shift, scale)
    Y_std = (data.Y - shift) / scale

    def batch_loss(idx: np.ndarray):
        cache = network.forward_cache(data.X[idx])
        loss, grad = evidential_loss(cache.output, Y_std[idx], cfg.evidential_lambda)
        grad_W, grad_b = network.backward(cache, grad)
        return loss, grad_W, grad_b

    def evaluate() -> Tuple[float, float]:
        train_loss = evidential_loss(network.forward(data.X), Y_std, cfg.evidential_lambda)[0]
        val_loss = math.nan
        if validation is not None and len(validation):
            val_loss = evidential_loss(network.forward(validation.X), (validation.Y - shift) / scale, cfg.evidential_lambda)[0]
        return train_loss, val_loss

    curve = fit_sgd(network, len(data), batch_loss, evaluate, cfg, label="evidential regressor")
    return model, TrainResult(network, curve)
