"""
Perception sources feeding the episode loop.

Every source answers perceive(t, severity) with the correction
T_true T_est^-1 (which maps the goal into where perception believes it is)
and the predictive covariance of the estimate. The VF target is then
s_a = correction . goal.

- LivePerception renders, corrupts and infers every cycle
- PooledPerception replays results precomputed by the live path
- ScriptedPerception returns fixed nominal/failure results (tests)
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence

import numpy as np

from src.config import ToolkitConfig
from src.errors import ToolkitError
from src.geometry.se3 import Covariance6, Pose, compose, inverse
from src.registration.partitioned import RegistrationTarget
from src.regressor.mlp import MLPModel
from src.regressor.pipeline import extract_features, predict_pose
from src.scene.camera import CameraModel, corrupt_cloud, render_depth_cloud, sample_viewpoints
from src.scene.twin import DigitalTwin
from src.uncertainty.calibration import trace_metric
from src.uncertainty.gp import MoEGP
from src.uncertainty.predictive import predict_full

logger = logging.getLogger(__name__)

# covariance reported when inference itself breaks down
FAILED_VARIANCE = 1e3


@dataclass(frozen=True)
class PerceptionResult:
    """One completed perception cycle.

    Attributes:
        correction: T_true T_est^-1
        cov: Predictive covariance of the estimate
        produced_at: Episode time the result was produced
        corrupted: Whether the input cloud was corrupted
    """

    correction: Pose
    cov: Covariance6
    produced_at: float = 0.0
    corrupted: bool = False

    def stamped(self, t: float, corrupted: Optional[bool] = None) -> "PerceptionResult":
        return PerceptionResult(self.correction, self.cov, t, self.corrupted if corrupted is None else corrupted)


class PerceptionSource(Protocol):
    def perceive(self, t: float, severity: float) -> PerceptionResult: ...


@dataclass
class ScriptedPerception:
    """Fixed results: exact nominal perception, a given offset under corruption."""

    nominal_variance: float = 1e-4
    failure_correction: Pose = field(default_factory=Pose.identity)
    failure_variance: float = 1.0

    def perceive(self, t: float, severity: float) -> PerceptionResult:
        if severity > 0:
            return PerceptionResult(self.failure_correction, Covariance6.diagonal([self.failure_variance] * 6), t, True)
        return PerceptionResult(Pose.identity(), Covariance6.diagonal([self.nominal_variance] * 6), t, False)


@dataclass
class PerceptionStack:
    """Trained components needed to perceive in one regime."""

    twin: DigitalTwin
    regime_id: int
    target: RegistrationTarget
    model: MLPModel
    moe: MoEGP
    config: ToolkitConfig


@dataclass
class LivePerception:
    """Render a jittered view, optionally corrupt it, and run RT+GP.

    The pose estimate used for the VF target is ICP-refined; the covariance
    is evaluated on the pre-ICP network output.
    """

    stack: PerceptionStack
    seed: int = 0
    _calls: int = field(default=0, repr=False)

    def perceive(self, t: float, severity: float) -> PerceptionResult:
        cfg = self.stack.config
        twin = self.stack.twin
        regime = twin.regime(self.stack.regime_id)
        call = self._calls
        self._calls += 1
        pose = sample_viewpoints(twin, regime, 1, seed=[self.seed, self.stack.regime_id, call], config=cfg.viewpoints)[0]
        camera = CameraModel.from_config(cfg.camera, pose)
        rng = np.random.default_rng([self.seed, self.stack.regime_id, call, 1])
        cloud = render_depth_cloud(twin, camera, rng=rng)
        if severity > 0:
            cloud = corrupt_cloud(cloud, severity, config=cfg.corruption, rng=rng)
        try:
            sample = extract_features(cloud, self.stack.target, cfg.registration)
            refined = predict_pose(self.stack.model, sample, self.stack.target, cfg.registration, refine=True)
            dist = predict_full(self.stack.moe, self.stack.regime_id, sample.pooled, self.stack.model)
        except ToolkitError as e:
            logger.warning(f"⚠️  Perception failed at t={t:.2f}: {e}")
            return PerceptionResult(Pose.identity(), Covariance6.diagonal([FAILED_VARIANCE] * 6), t, severity > 0)
        correction = compose(pose, inverse(refined.pose))
        return PerceptionResult(correction, dist.cov, t, severity > 0)


@dataclass
class PerceptionPool:
    """Precomputed nominal and corrupted perception results."""

    nominal: List[PerceptionResult]
    corrupted: List[PerceptionResult]

    @classmethod
    def build(cls, stack: PerceptionStack, size: int, severity: float = 1.0, seed: int = 0) -> "PerceptionPool":
        live = LivePerception(stack, seed=seed)
        nominal = [live.perceive(0.0, 0.0) for _ in range(size)]
        corrupted = [live.perceive(0.0, severity) for _ in range(size)]
        logger.info(f"📦 Built perception pool for regime {stack.regime_id}: {size} nominal + {size} corrupted")
        return cls(nominal, corrupted)

    def traces(self, translation_weight: float = 1.0) -> Sequence[float]:
        return [trace_metric(r.cov, translation_weight) for r in self.nominal]


@dataclass
class PooledPerception:
    """Deterministic draws from a PerceptionPool."""

    pool: PerceptionPool
    seed: int = 0
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng([self.seed, 11])

    def perceive(self, t: float, severity: float) -> PerceptionResult:
        results = self.pool.corrupted if severity > 0 else self.pool.nominal
        return results[int(self._rng.integers(len(results)))].stamped(t, severity > 0)
