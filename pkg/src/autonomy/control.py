"""
Mixed-initiative control law.

Operator and autonomy each command a Cartesian PD wrench toward their own
setpoint; the robot applies F = alpha F_h + (1 - alpha) F_a, with alpha = 1
(pure teleoperation) whenever the perception uncertainty exceeds beta and
1/2 otherwise. Wrenches and twists are ordered (linear, angular).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.config import AutonomyConfig
from src.autonomy.dynamics import RobotState
from src.errors import EmptyValidation
from src.geometry.se3 import Covariance6, Pose, rotation_log
from src.uncertainty.calibration import trace_metric

logger = logging.getLogger(__name__)

ALPHA_SHARED = 0.5
ALPHA_TELEOP = 1.0
ALLOWED_ALPHAS = (ALPHA_SHARED, ALPHA_TELEOP)


@dataclass(frozen=True)
class WrenchCommand:
    """Cartesian wrench (fx, fy, fz, tx, ty, tz) in N and N m."""

    F: np.ndarray

    def __post_init__(self) -> None:
        F = np.asarray(self.F, dtype=float).reshape(6)
        if not np.all(np.isfinite(F)):
            raise ValueError(f"Wrench must be finite, got {F}")
        object.__setattr__(self, "F", F)

    @classmethod
    def zero(cls) -> "WrenchCommand":
        return cls(np.zeros(6))

    @property
    def force(self) -> np.ndarray:
        return self.F[:3]

    @property
    def torque(self) -> np.ndarray:
        return self.F[3:]


@dataclass(frozen=True)
class Gains:
    """Diagonal PD gains of both wrench sources."""

    kp_operator: np.ndarray
    kd_operator: np.ndarray
    kp_autonomy: np.ndarray
    kd_autonomy: np.ndarray

    def __post_init__(self) -> None:
        for name in ("kp_operator", "kd_operator", "kp_autonomy", "kd_autonomy"):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (6,)).copy()
            if np.any(value <= 0):
                raise ValueError(f"{name} entries must be positive, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_config(cls, cfg: AutonomyConfig) -> "Gains":
        return cls(cfg.kp_operator, cfg.kd_operator, cfg.kp_autonomy, cfg.kd_autonomy)


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """(translation difference, log of the relative rotation R_target R_current^T)."""
    return np.concatenate(
        [target.translation - current.translation, rotation_log(target.rotation @ current.rotation.T)]
    )


def pd_wrench(target: Pose, target_twist: Sequence[float], pose: Pose, twist: Sequence[float], kp: np.ndarray, kd: np.ndarray) -> WrenchCommand:
    """K_d (v_target - v) + K_p e(target, pose)."""
    dv = np.asarray(target_twist, dtype=float).reshape(6) - np.asarray(twist, dtype=float).reshape(6)
    return WrenchCommand(kd * dv + kp * pose_error(target, pose))


# ============================================================
# Authority allocation
# ============================================================


@dataclass
class AuthorityState:
    """Current authority level and the inputs of its last decision.

    Attributes:
        beta: Threshold on the weighted covariance trace
        alpha: Current authority factor
        current_metric: Last trace fed to decide_authority
        manual_override: Forced alpha, when set
        dwell_time: Minimum time between switches (0 disables)
        translation_weight: Trace weight on the translation block
        last_switch: Time of the last alpha change
    """

    beta: float
    alpha: float = ALPHA_SHARED
    current_metric: float = math.nan
    manual_override: Optional[float] = None
    dwell_time: float = 0.0
    translation_weight: float = 1.0
    last_switch: float = -math.inf

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        for value in (self.alpha, self.manual_override):
            if value is not None and value not in ALLOWED_ALPHAS:
                raise ValueError(f"alpha must be 1/2 or 1, got {value}")


def decide_authority(auth: AuthorityState, cov: Covariance6, t: float = 0.0) -> float:
    """alpha = 1 if ||Sigma|| > beta else 1/2, with manual override and optional dwell."""
    auth.current_metric = trace_metric(cov, auth.translation_weight)
    if auth.manual_override is not None:
        proposed = auth.manual_override
    else:
        proposed = ALPHA_TELEOP if auth.current_metric > auth.beta else ALPHA_SHARED
    if proposed != auth.alpha and t - auth.last_switch >= auth.dwell_time:
        logger.debug(f"Authority {auth.alpha} -> {proposed} at t={t:.2f} (trace {auth.current_metric:.4g}, beta {auth.beta:.4g})")
        auth.alpha = proposed
        auth.last_switch = t
    return auth.alpha


def select_threshold(validation_metrics: Sequence[float], margin: float = 0.1) -> float:
    """beta = max(validation traces) x (1 + margin).

    Raises:
        EmptyValidation: With no validation metrics
    """
    metrics = np.asarray(list(validation_metrics), dtype=float)
    if metrics.size == 0:
        raise EmptyValidation("Cannot select beta from 0 validation metrics")
    if metrics.size < 10:
        logger.warning(f"⚠️  Selecting beta from only {metrics.size} validation metrics")
    return float(np.max(metrics)) * (1.0 + margin)


def blend(F_h: WrenchCommand, F_a: WrenchCommand, alpha: float) -> WrenchCommand:
    """F = alpha F_h + (1 - alpha) F_a; at alpha = 1 F_a is not read."""
    if alpha not in ALLOWED_ALPHAS:
        raise ValueError(f"alpha must be 1/2 or 1, got {alpha}")
    if alpha == ALPHA_TELEOP:
        return WrenchCommand(F_h.F.copy())
    return WrenchCommand(alpha * F_h.F + (1.0 - alpha) * F_a.F)


# ============================================================
# Autonomy side
# ============================================================


@dataclass(frozen=True)
class AutonomyTarget:
    """Perceived target pose s_a with its twist v_a and the covariance behind it."""

    pose: Pose
    twist: np.ndarray = None
    cov: Optional[Covariance6] = None

    def __post_init__(self) -> None:
        twist = np.zeros(6) if self.twist is None else np.asarray(self.twist, dtype=float).reshape(6)
        object.__setattr__(self, "twist", twist)


def autonomy_wrench(target: AutonomyTarget, state: RobotState, gains: Gains) -> WrenchCommand:
    """F_a = K_d,a (v_a - v_r) + K_p,a e(s_a, s_r)."""
    return pd_wrench(target.pose, target.twist, state.pose, state.twist, gains.kp_autonomy, gains.kd_autonomy)
