"""
Scripted teleoperator and the delayed command channel.

The operator drives a setpoint s_h toward the goal with bounded speed. Its
aim carries a bias that decays as the operator refines the alignment
(imprecise unassisted teleoperation). A confused operator slows down while
the robot is in pure teleoperation, seen through a reaction lag.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.autonomy.control import ALPHA_TELEOP, Gains, WrenchCommand, pd_wrench
from src.autonomy.dynamics import RobotState
from src.config import AutonomyConfig
from src.geometry.se3 import Pose, orthonormalize, so3_exp, so3_log

logger = logging.getLogger(__name__)


def _unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


@dataclass
class ScriptedOperator:
    """Bounded-speed PD operator aiming at goal plus a decaying bias.

    Attributes:
        goal: True end-effector goal
        setpoint: Current commanded pose s_h
        cfg: Speeds, bias, lag and confusion settings
        seed: Draws the bias directions
    """

    goal: Pose
    setpoint: Pose
    cfg: AutonomyConfig
    seed: int = 0
    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    _alpha_history: List[Tuple[float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        rng = np.random.default_rng([self.seed, 7])
        self._bias_dir = _unit(rng)
        self._bias_axis = _unit(rng)

    def aim(self, t: float) -> Pose:
        decay = math.exp(-t / self.cfg.aim_bias_time_constant)
        offset = self.cfg.aim_bias_translation * decay * self._bias_dir
        tilt = so3_exp(self.cfg.aim_bias_rotation * decay * self._bias_axis)
        return Pose(orthonormalize(tilt @ self.goal.rotation), self.goal.translation + offset)

    def observe_alpha(self, t: float, alpha: float) -> None:
        self._alpha_history.append((t, alpha))

    def _perceived_alpha(self, t: float) -> float:
        seen = t - self.cfg.reaction_lag
        alpha = 0.5
        for stamp, value in self._alpha_history:
            if stamp > seen:
                break
            alpha = value
        # keep only what the lag can still reach
        while len(self._alpha_history) > 1 and self._alpha_history[1][0] <= seen:
            self._alpha_history.pop(0)
        return alpha

    def update(self, t: float, dt: float) -> Tuple[Pose, np.ndarray]:
        """Advance the setpoint by one step and return (s_h, v_h)."""
        if t < self.cfg.reaction_lag:
            self.twist = np.zeros(6)
            return self.setpoint, self.twist
        speed = self.cfg.max_speed
        angular = self.cfg.max_angular_speed
        if self.cfg.confused_operator and self._perceived_alpha(t) == ALPHA_TELEOP:
            speed /= self.cfg.confused_factor
            angular /= self.cfg.confused_factor
        target = self.aim(t)
        linear = _clip_norm(self.cfg.approach_gain * (target.translation - self.setpoint.translation), speed)
        omega = _clip_norm(
            self.cfg.approach_gain * so3_log(target.rotation @ self.setpoint.rotation.T), angular
        )
        self.setpoint = Pose(
            orthonormalize(so3_exp(omega * dt) @ self.setpoint.rotation),
            self.setpoint.translation + linear * dt,
        )
        self.twist = np.concatenate([linear, omega])
        return self.setpoint, self.twist


@dataclass
class OperatorChannel:
    """Timestamped operator commands delivered with a constant delay T.

    Attributes:
        delay: Transmission delay T in seconds
    """

    delay: float = 0.0
    _times: List[float] = field(default_factory=list, repr=False)
    _commands: List[Tuple[Pose, np.ndarray]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError(f"Delay must be non-negative, got {self.delay}")

    def __len__(self) -> int:
        return len(self._times)

    def push(self, t: float, pose: Pose, twist: np.ndarray) -> None:
        """Record the operator command issued at time t.

        Raises:
            ValueError: If t precedes the last recorded timestamp
        """
        if self._times and t < self._times[-1]:
            raise ValueError(f"Command at t={t} precedes the last one at t={self._times[-1]}")
        self._times.append(float(t))
        self._commands.append((pose, np.asarray(twist, dtype=float).copy()))

    def delayed(self, t: float) -> Tuple[Pose, np.ndarray]:
        """Latest command issued at or before t - T (the first one before that).

        Raises:
            LookupError: If nothing was pushed yet
        """
        if not self._times:
            raise LookupError("Operator channel is empty")
        # tolerate float round-off in t - T
        i = bisect.bisect_right(self._times, t - self.delay + 1e-9) - 1
        return self._commands[max(i, 0)]


def operator_wrench(channel: OperatorChannel, state: RobotState, gains: Gains, t: float) -> WrenchCommand:
    """F_h = K_d,r (v_bar - v_r) + K_p,r e(s_bar, s_r) with the delayed operator command."""
    pose, twist = channel.delayed(t)
    return pd_wrench(pose, twist, state.pose, state.twist, gains.kp_operator, gains.kd_operator)
