"""
Regressor training: losses, their gradients and minibatch SGD with momentum.

Targets are head coordinates (omega, t). Two losses are supported:

- lie_mse: mean squared error between predicted and ground-truth head vectors
- weighted_rigid: (1 / sum w) sum w |R p + t - q|^2 over a sample's
  correspondences, with R = exp(omega) and per-pair inlier weights
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.config import TrainConfig
from src.errors import EmptyValidation, NonFiniteLoss
from src.geometry.se3 import left_jacobian, so3_exp
from src.regressor.mlp import MLPModel

logger = logging.getLogger(__name__)

BatchLoss = Callable[[np.ndarray], Tuple[float, List[np.ndarray], List[np.ndarray]]]


@dataclass
class TrainingSet:
    """Pooled inputs with head-coordinate targets.

    Attributes:
        X: (N, D_in) pooled features
        Y: (N, 6) head-coordinate targets
        pairs: Per-sample (p, q, w) correspondence arrays for weighted_rigid
    """

    X: np.ndarray
    Y: np.ndarray
    pairs: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if len(self.X) != len(self.Y):
            raise ValueError(f"X has {len(self.X)} rows but Y has {len(self.Y)}")
        if self.pairs and len(self.pairs) != len(self.X):
            raise ValueError(f"Expected {len(self.X)} correspondence sets, got {len(self.pairs)}")

    def __len__(self) -> int:
        return len(self.X)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: MLPModel
    curve: List[LossRecord]

    @property
    def initial_loss(self) -> float:
        return self.curve[0].train_loss

    @property
    def final_loss(self) -> float:
        return self.curve[-1].train_loss


# ============================================================
# Losses
# ============================================================


def inlier_weights(p: np.ndarray, q: np.ndarray, rotation: np.ndarray, translation: np.ndarray, threshold: float) -> np.ndarray:
    """1 for pairs whose ground-truth residual is below threshold, else 0; all ones if none pass."""
    residual = np.linalg.norm(p @ rotation.T + translation - q, axis=1)
    w = (residual < threshold).astype(float)
    if not np.any(w):
        return np.ones(len(p))
    return w


def lie_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over samples of the squared head-vector error."""
    diff = np.atleast_2d(pred) - np.atleast_2d(target)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def weighted_rigid(head: np.ndarray, p: np.ndarray, q: np.ndarray, w: np.ndarray) -> Tuple[float, np.ndarray]:
    """Weighted rigid residual of one sample and its gradient w.r.t. the head vector.

    Returns:
        (loss, d loss / d head) with the head ordered (omega, t)

    Raises:
        ValueError: If the weights are negative or sum to zero
    """
    omega, t = head[:3], head[3:]
    rp = p @ so3_exp(omega).T
    e = rp + t - q
    total = float(np.sum(w))
    if total <= 0.0 or np.any(w < 0):
        raise ValueError(f"weighted_rigid needs non-negative weights with a positive sum, got sum {total}")
    loss = float(np.sum(w * np.sum(e * e, axis=1))) / total
    grad_t = 2.0 * (w[:, None] * e).sum(axis=0) / total
    # left-perturbation gradient mapped through the left Jacobian of SO(3)
    grad_delta = 2.0 * (w[:, None] * np.cross(rp, e)).sum(axis=0) / total
    grad_omega = left_jacobian(omega).T @ grad_delta
    return loss, np.concatenate([grad_omega, grad_t])


def loss_and_gradients(model: MLPModel, data: TrainingSet, indices: Sequence[int], kind: str = "lie_mse") -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Batch loss and parameter gradients.

    Args:
        model: Network being trained
        data: Training data
        indices: Batch rows
        kind: "lie_mse" or "weighted_rigid"
    """
    idx = np.asarray(indices)
    cache = model.forward_cache(data.X[idx])
    pred = cache.output
    if kind == "lie_mse":
        diff = pred - data.Y[idx]
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        grad = 2.0 * diff / len(idx)
    elif kind == "weighted_rigid":
        if not data.pairs:
            raise ValueError("weighted_rigid needs per-sample correspondences")
        loss = 0.0
        grad = np.zeros_like(pred)
        for row, i in enumerate(idx):
            p, q, w = data.pairs[i]
            value, g = weighted_rigid(pred[row], p, q, w)
            loss += value / len(idx)
            grad[row] = g / len(idx)
    else:
        raise ValueError(f"Unknown loss: {kind}")
    grad_W, grad_b = model.backward(cache, grad)
    return loss, grad_W, grad_b


def dataset_loss(model: MLPModel, data: TrainingSet, kind: str = "lie_mse") -> float:
    if len(data) == 0:
        raise EmptyValidation("Cannot evaluate a loss on an empty dataset")
    if kind == "lie_mse":
        return lie_mse(model.forward(data.X), data.Y)
    pred = model.forward(data.X)
    return float(np.mean([weighted_rigid(pred[i], *data.pairs[i])[0] for i in range(len(data))]))


# ============================================================
# Optimizer
# ============================================================


def fit_standardization(model: MLPModel, X: np.ndarray, Y: Optional[np.ndarray] = None) -> None:
    """Fit input (and optionally output) standardization from data, once."""
    if model.standardized:
        return
    model.input_shift = X.mean(axis=0)
    model.input_scale = _safe_scale(X.std(axis=0))
    if Y is not None:
        model.output_shift = Y.mean(axis=0)
        model.output_scale = _safe_scale(Y.std(axis=0))
    model.standardized = True


def _safe_scale(std: np.ndarray) -> np.ndarray:
    return np.where(std > 1e-8, std, 1.0)


def fit_sgd(
    model: MLPModel,
    n_samples: int,
    batch_loss: BatchLoss,
    evaluate: Callable[[], Tuple[float, float]],
    cfg: TrainConfig,
    epochs: Optional[int] = None,
    label: str = "regressor",
) -> List[LossRecord]:
    """Minibatch SGD with momentum, v <- mu v - lr g; theta <- theta + v.

    Args:
        model: Network updated in place
        n_samples: Training set size
        batch_loss: Maps batch indices to (loss, grad_W, grad_b)
        evaluate: Returns (train_loss, val_loss) after each epoch
        cfg: Learning rate, momentum, batch size and seed
        epochs: Overrides cfg.epochs
        label: Name used in log lines

    Returns:
        Loss curve starting with the untrained model at epoch 0

    Raises:
        NonFiniteLoss: On a NaN or infinite loss or gradient
    """
    if n_samples <= 0:
        raise ValueError("Cannot train on an empty dataset")
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    vel_W = [np.zeros_like(W) for W in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    curve = [LossRecord(0, *evaluate())]
    log_every = max(1, epochs // 10)
    logger.info(f"🏋️ Training {label}: {n_samples} samples, {epochs} epochs, initial loss {curve[0].train_loss:.6g}")

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_samples)
        for batch_no, start in enumerate(range(0, n_samples, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, grad_W, grad_b = batch_loss(idx)
            finite = math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grad_W + grad_b)
            if not finite:
                raise NonFiniteLoss(f"{label}: non-finite loss {loss} at epoch {epoch}, batch {batch_no}")
            for i in range(model.n_layers):
                vel_W[i] = cfg.momentum * vel_W[i] - cfg.learning_rate * grad_W[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * grad_b[i]
                model.weights[i] = model.weights[i] + vel_W[i]
                model.biases[i] = model.biases[i] + vel_b[i]
        record = LossRecord(epoch, *evaluate())
        if not math.isfinite(record.train_loss):
            raise NonFiniteLoss(f"{label}: non-finite training loss {record.train_loss} after epoch {epoch}")
        curve.append(record)
        if epoch % log_every == 0 or epoch == epochs:
            logger.info(f"📉 {label} epoch {epoch}/{epochs}: train {record.train_loss:.6g}, val {record.val_loss:.6g}")
    return curve


def train(
    model: MLPModel,
    data: TrainingSet,
    cfg: Optional[TrainConfig] = None,
    validation: Optional[TrainingSet] = None,
) -> TrainResult:
    """Train the pose regressor in place.

    The recorded train loss is always lie_mse over the training set so curves
    from both losses are comparable; the configured loss drives the updates.

    Raises:
        NonFiniteLoss: If the loss diverges
        ValueError: If the training set is empty
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise ValueError("Cannot train on an empty dataset")
    fit_standardization(model, data.X, data.Y)

    def evaluate() -> Tuple[float, float]:
        val = lie_mse(model.forward(validation.X), validation.Y) if validation is not None and len(validation) else math.nan
        return lie_mse(model.forward(data.X), data.Y), val

    curve = fit_sgd(
        model,
        len(data),
        lambda idx: loss_and_gradients(model, data, idx, cfg.loss),
        evaluate,
        cfg,
        label=f"regressor ({cfg.loss})",
    )
    return TrainResult(model, curve)


# ============================================================
# Correspondence weight head (GR baseline)
# ============================================================


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    return loss, (expit(logits) - labels) / len(logits)


def train_weight_head(
    rows: np.ndarray,
    labels: np.ndarray,
    cfg: Optional[TrainConfig] = None,
    hidden: int = 16,
) -> TrainResult:
    """Fit the per-correspondence inlier classifier 73 -> 16 -> 1.

    Args:
        rows: (M, 73) correspondence feature rows pooled over training views
        labels: (M,) ground-truth inlier indicators
        cfg: Optimizer settings (weight_head_epochs epochs)
        hidden: Hidden width
    """
    cfg = cfg or TrainConfig()
    rows = np.asarray(rows, dtype=float)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    model = MLPModel.initialize((rows.shape[1], hidden, 1), seed=cfg.seed)
    fit_standardization(model, rows)

    def batch_loss(idx: np.ndarray):
        cache = model.forward_cache(rows[idx])
        loss, grad = bce_with_logits(cache.output[:, 0], labels[idx])
        grad_W, grad_b = model.backward(cache, grad[:, None])
        return loss, grad_W, grad_b

    def evaluate() -> Tuple[float, float]:
        return bce_with_logits(model.forward(rows)[:, 0], labels)[0], math.nan

    # rows outnumber views, so larger batches keep the epoch cost comparable
    batch_cfg = cfg.model_copy(update={"batch_size": cfg.batch_size * 8})
    curve = fit_sgd(model, len(rows), batch_loss, evaluate, batch_cfg, epochs=cfg.weight_head_epochs, label="weight head")
    return TrainResult(model, curve)
