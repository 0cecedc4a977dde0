"""
Decoupled 6-DoF mass-damper standing in for the manipulator.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.errors import NonFiniteState
from src.geometry.se3 import Pose, orthonormalize, so3_exp


@dataclass(frozen=True)
class RobotState:
    """End-effector pose s_r and twist v_r = (linear, angular)."""

    pose: Pose
    twist: np.ndarray

    def __post_init__(self) -> None:
        twist = np.asarray(self.twist, dtype=float).reshape(6)
        if not np.all(np.isfinite(twist)):
            raise NonFiniteState(f"Robot twist is not finite: {twist}")
        object.__setattr__(self, "twist", twist)

    @classmethod
    def at_rest(cls, pose: Pose) -> "RobotState":
        return cls(pose, np.zeros(6))

    def kinetic_energy(self, mass: Sequence[float]) -> float:
        return 0.5 * float(np.sum(np.asarray(mass, dtype=float) * self.twist ** 2))


def step_dynamics(state: RobotState, F: np.ndarray, dt: float, mass: Sequence[float], damping: float) -> RobotState:
    """Semi-implicit Euler step of M dv/dt = F - D v.

    The new twist integrates the pose: translation additively, rotation by a
    left-composed exponential.

    Raises:
        ValueError: If dt is not positive
        NonFiniteState: If the state leaves the finite range
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    F = np.asarray(F, dtype=float).reshape(6)
    mass = np.asarray(mass, dtype=float).reshape(6)
    twist = state.twist + (F - damping * state.twist) / mass * dt
    if not np.all(np.isfinite(twist)):
        raise NonFiniteState(f"Twist diverged to {twist} under wrench {F}")
    rotation = orthonormalize(so3_exp(twist[3:] * dt) @ state.pose.rotation)
    translation = state.pose.translation + twist[:3] * dt
    if not np.all(np.isfinite(translation)):
        raise NonFiniteState(f"Position diverged to {translation}")
    return RobotState(Pose(rotation, translation), twist)
