"""
Closed-loop shared-autonomy episodes.

Each step at fixed dt: refresh perception when a perception cycle is due,
decide the authority level, compute the delayed operator wrench and the VF
wrench, blend them and integrate the end-effector dynamics. A safety monitor
fails the episode on excessive force or torque, or when the end-effector
leaves the corridor around the start-goal segment.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.autonomy.control import (
    ALPHA_SHARED,
    ALPHA_TELEOP,
    AuthorityState,
    AutonomyTarget,
    Gains,
    autonomy_wrench,
    blend,
    decide_authority,
)
from src.autonomy.dynamics import RobotState, step_dynamics
from src.autonomy.failures import FailingPerception, inject_failure
from src.autonomy.operator import OperatorChannel, ScriptedOperator, operator_wrench
from src.autonomy.perception import PerceptionResult, PerceptionSource
from src.config import AutonomyConfig
from src.geometry.se3 import Pose, compose, orthonormalize, rotation_angle, so3_exp

logger = logging.getLogger(__name__)

MODE_OVERRIDES: Dict[str, Optional[float]] = {
    "vanilla_teleop": ALPHA_TELEOP,
    "vanilla_vf": ALPHA_SHARED,
    "spirit": None,
}

COLUMNS = (
    ["t", "qx", "qy", "qz", "qw", "x", "y", "z"]
    + [f"v_{i}" for i in range(6)]
    + [f"F_{i}" for i in range(6)]
    + [f"F_h_{i}" for i in range(6)]
    + [f"F_a_{i}" for i in range(6)]
    + ["tr_sigma", "alpha", "failure_active", "perception_t", "s_a_x", "s_a_y", "s_a_z"]
)


@dataclass
class EpisodeLog:
    """Per-step signals of one episode, one row per control step."""

    rows: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: np.ndarray) -> None:
        self.rows.append(np.asarray(row, dtype=float))

    def as_array(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(COLUMNS)))
        return np.vstack(self.rows)

    def column(self, name: str) -> np.ndarray:
        return self.as_array()[:, COLUMNS.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        """The 6 columns F_i, F_h_i, F_a_i or v_i as an (n, 6) array."""
        start = COLUMNS.index(f"{prefix}_0")
        return self.as_array()[:, start:start + 6]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row])
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "EpisodeLog":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != COLUMNS:
                raise ValueError(f"Unexpected episode log columns in {path}: {header[:8]}...")
            return cls([np.array([float(v) for v in row]) for row in reader])


@dataclass(frozen=True)
class EpisodeMetrics:
    """Outcome of one episode.

    Attributes:
        success: Reached the goal tolerance before timeout and without a safety stop
        completion_time: Time of success, or of the stop otherwise (s)
        mean_force: Mean |F_lin| of the applied wrench (N)
        mean_torque: Mean |F_ang| of the applied wrench (N m)
        failure_reason: "", "timeout", "force_limit", "torque_limit" or "corridor"
        steps: Control steps executed
    """

    success: bool
    completion_time: float
    mean_force: float
    mean_torque: float
    failure_reason: str = ""
    steps: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EpisodeResult:
    mode: str
    seed: int
    log: EpisodeLog
    metrics: EpisodeMetrics


def start_pose(goal: Pose, cfg: AutonomyConfig, seed: int = 0) -> Pose:
    """Goal displaced by start_offset and tilted by start_rotation_offset about a seeded axis."""
    rng = np.random.default_rng([seed, 3])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rotation = orthonormalize(so3_exp(cfg.start_rotation_offset * axis) @ goal.rotation)
    return Pose(rotation, goal.translation + np.asarray(cfg.start_offset, dtype=float))


def corridor_deviation(position: np.ndarray, start: np.ndarray, goal: np.ndarray) -> float:
    """Distance from a point to the segment start-goal."""
    seg = goal - start
    length_sq = float(seg @ seg)
    if length_sq == 0.0:
        return float(np.linalg.norm(position - start))
    s = min(max(float((position - start) @ seg) / length_sq, 0.0), 1.0)
    return float(np.linalg.norm(position - (start + s * seg)))


def _safety_violation(F: np.ndarray, position: np.ndarray, start: np.ndarray, goal: np.ndarray, cfg: AutonomyConfig) -> str:
    if np.linalg.norm(F[:3]) > cfg.force_limit:
        return "force_limit"
    if np.linalg.norm(F[3:]) > cfg.torque_limit:
        return "torque_limit"
    if corridor_deviation(position, start, goal) > cfg.corridor:
        return "corridor"
    return ""


def _log_row(t: float, state: RobotState, F, F_h, F_a, tr_sigma: float, alpha: float, failing: bool, latest: PerceptionResult, s_a: Pose) -> np.ndarray:
    quat = Rotation.from_matrix(state.pose.rotation).as_quat()
    return np.concatenate(
        [
            [t], quat, state.pose.translation, state.twist, F.F, F_h.F, F_a.F,
            [tr_sigma, alpha, float(failing), latest.produced_at], s_a.translation,
        ]
    )


def run_episode(
    cfg: AutonomyConfig,
    goal: Pose,
    source: Union[PerceptionSource, FailingPerception],
    beta: float,
    seed: int = 0,
    translation_weight: float = 1.0,
) -> EpisodeResult:
    """Run one seeded episode in cfg.mode.

    Args:
        cfg: Episode settings; cfg.failures is applied unless source already
            carries a schedule
        goal: End-effector goal pose
        source: Perception source (nominal stream)
        beta: Authority threshold on the weighted covariance trace
        seed: Seeds the operator bias and start tilt

    Returns:
        EpisodeResult with the per-step log and outcome metrics

    Raises:
        NonFiniteState: If the dynamics diverge
    """
    perception = source if isinstance(source, FailingPerception) else inject_failure(source, list(cfg.failures))
    gains = Gains.from_config(cfg)
    start = start_pose(goal, cfg, seed)
    state = RobotState.at_rest(start)
    operator = ScriptedOperator(goal, start, cfg, seed=seed)
    channel = OperatorChannel(cfg.delay)
    override = MODE_OVERRIDES[cfg.mode]
    auth = AuthorityState(
        beta,
        alpha=ALPHA_SHARED if override is None else override,
        manual_override=override,
        dwell_time=cfg.dwell_time,
        translation_weight=translation_weight,
    )

    steps_per_cycle = max(1, int(round(cfg.perception_period / cfg.dt)))
    n_steps = int(math.ceil(cfg.timeout / cfg.dt))
    log = EpisodeLog()
    latest: Optional[PerceptionResult] = None
    reason = "timeout"
    success = False
    t = 0.0

    for step in range(n_steps + 1):
        t = step * cfg.dt
        if step % steps_per_cycle == 0:
            latest = perception.perceive(t)
            decide_authority(auth, latest.cov, t)
            operator.observe_alpha(t, auth.alpha)

        setpoint, twist = operator.update(t, cfg.dt)
        channel.push(t, setpoint, twist)
        s_a = perception.target(compose(latest.correction, goal), t)
        F_h = operator_wrench(channel, state, gains, t)
        F_a = autonomy_wrench(AutonomyTarget(s_a, cov=latest.cov), state, gains)
        F = blend(F_h, F_a, auth.alpha)
        log.append(
            _log_row(t, state, F, F_h, F_a, auth.current_metric, auth.alpha, perception.failure_active(t), latest, s_a)
        )

        trans_err = float(np.linalg.norm(state.pose.translation - goal.translation))
        rot_err = rotation_angle(state.pose.rotation @ goal.rotation.T)
        if trans_err < cfg.success_translation and rot_err < cfg.success_rotation:
            success, reason = True, ""
            break
        violation = _safety_violation(F.F, state.pose.translation, start.translation, goal.translation, cfg)
        if violation:
            reason = violation
            break
        state = step_dynamics(state, F.F, cfg.dt, cfg.mass, cfg.damping)

    wrenches = log.block("F")
    metrics = EpisodeMetrics(
        success=success,
        completion_time=t,
        mean_force=float(np.mean(np.linalg.norm(wrenches[:, :3], axis=1))),
        mean_torque=float(np.mean(np.linalg.norm(wrenches[:, 3:], axis=1))),
        failure_reason=reason,
        steps=len(log),
    )
    outcome = "✅ success" if success else f"❌ {reason}"
    logger.info(f"🤖 Episode {cfg.mode} seed={seed}: {outcome} at t={t:.2f}s")
    return EpisodeResult(cfg.mode, seed, log, metrics)


def alpha_matches_trace(log: EpisodeLog, beta: float) -> bool:
    """True when every logged alpha follows alpha = 1 iff tr(Sigma) > beta."""
    expected = np.where(log.column("tr_sigma") > beta, ALPHA_TELEOP, ALPHA_SHARED)
    return bool(np.array_equal(log.column("alpha"), expected))
