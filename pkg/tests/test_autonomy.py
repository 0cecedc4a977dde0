"""Tests for the control law, operator model, failure injection and closed-loop episodes."""

import math

import numpy as np
import pytest

from src.autonomy.control import (
    ALPHA_SHARED,
    ALPHA_TELEOP,
    AuthorityState,
    Gains,
    WrenchCommand,
    blend,
    decide_authority,
    pd_wrench,
    select_threshold,
)
from src.autonomy.dynamics import RobotState, step_dynamics
from src.autonomy.episode import (
    COLUMNS,
    EpisodeLog,
    alpha_matches_trace,
    corridor_deviation,
    run_episode,
    start_pose,
)
from src.autonomy.failures import FailureSchedule, inject_failure, sinusoid_offset
from src.autonomy.operator import OperatorChannel
from src.autonomy.perception import PerceptionPool, PerceptionResult, PooledPerception, ScriptedPerception
from src.config import AutonomyConfig, FailureWindow
from src.errors import EmptyValidation, OverlappingWindows
from src.geometry.se3 import Covariance6, Pose, so3_exp

GOAL = Pose(so3_exp([0.0, 0.0, 0.3]), [1.0, 0.5, 0.8])
BETA = 0.01
WRONG_TARGET = Pose(np.eye(3), [0.0, 0.0, -0.8])


def episode_config(mode: str, **overrides) -> AutonomyConfig:
    return AutonomyConfig(mode=mode, **{"timeout": 60.0, **overrides})


def corruption_window() -> FailureWindow:
    return FailureWindow(t_start=2.0, t_end=12.0, mode="cloud_corruption")


class TestBlend:
    def test_shared_average(self):
        F = blend(WrenchCommand(np.ones(6)), WrenchCommand(np.full(6, 3.0)), ALPHA_SHARED)
        assert np.allclose(F.F, 2.0)

    def test_teleop_ignores_autonomy(self):
        F_h = WrenchCommand(np.arange(6.0))
        a = blend(F_h, WrenchCommand(np.full(6, 1e9)), ALPHA_TELEOP)
        b = blend(F_h, WrenchCommand.zero(), ALPHA_TELEOP)
        assert np.array_equal(a.F, F_h.F) and np.array_equal(b.F, F_h.F)

    def test_rejects_other_alphas(self):
        with pytest.raises(ValueError):
            blend(WrenchCommand.zero(), WrenchCommand.zero(), 0.3)


class TestAuthority:
    def test_threshold(self):
        auth = AuthorityState(BETA)
        assert decide_authority(auth, Covariance6.diagonal([1e-4] * 6)) == ALPHA_SHARED
        assert decide_authority(auth, Covariance6.diagonal([1.0] * 6), t=0.1) == ALPHA_TELEOP
        assert auth.current_metric == pytest.approx(6.0)

    def test_manual_override(self):
        auth = AuthorityState(BETA, alpha=ALPHA_TELEOP, manual_override=ALPHA_TELEOP)
        assert decide_authority(auth, Covariance6.diagonal([1e-6] * 6)) == ALPHA_TELEOP

    def test_dwell_time(self):
        auth = AuthorityState(BETA, dwell_time=1.0)
        high, low = Covariance6.diagonal([1.0] * 6), Covariance6.diagonal([1e-6] * 6)
        assert decide_authority(auth, high, t=0.0) == ALPHA_TELEOP
        assert decide_authority(auth, low, t=0.5) == ALPHA_TELEOP
        assert decide_authority(auth, low, t=1.0) == ALPHA_SHARED

    def test_invalid_state(self):
        with pytest.raises(ValueError):
            AuthorityState(0.0)
        with pytest.raises(ValueError):
            AuthorityState(BETA, alpha=0.7)

    def test_select_threshold(self):
        assert select_threshold([0.1, 0.4, 0.2], margin=0.1) == pytest.approx(0.44)
        with pytest.raises(EmptyValidation):
            select_threshold([])


class TestDynamics:
    def test_pd_wrench_direction(self):
        target = Pose(np.eye(3), [0.1, 0.0, 0.0])
        F = pd_wrench(target, np.zeros(6), Pose.identity(), np.zeros(6), np.full(6, 100.0), np.full(6, 20.0))
        assert F.force[0] == pytest.approx(10.0)
        assert np.allclose(F.F[1:], 0.0)

    def test_rest_is_equilibrium(self):
        state = RobotState.at_rest(GOAL)
        nxt = step_dynamics(state, np.zeros(6), 0.01, (10.0,) * 3 + (1.0,) * 3, 20.0)
        assert np.allclose(nxt.pose.matrix(), GOAL.matrix())
        assert np.array_equal(nxt.twist, np.zeros(6))

    def test_terminal_velocity(self):
        state = RobotState.at_rest(Pose.identity())
        F = np.array([20.0, 0, 0, 0, 0, 0])
        for _ in range(2000):
            state = step_dynamics(state, F, 0.01, (10.0,) * 3 + (1.0,) * 3, 20.0)
        assert state.twist[0] == pytest.approx(1.0, rel=1e-6)

    def test_energy_decays(self):
        mass = (10.0,) * 3 + (1.0,) * 3
        state = RobotState(Pose.identity(), np.array([0.5, -0.2, 0.1, 0.3, 0.0, -0.4]))
        energies = []
        for _ in range(50):
            energies.append(state.kinetic_energy(mass))
            state = step_dynamics(state, np.zeros(6), 0.01, mass, 20.0)
        assert all(b < a for a, b in zip(energies, energies[1:]))

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            step_dynamics(RobotState.at_rest(GOAL), np.zeros(6), 0.0, (1.0,) * 6, 1.0)

    def test_gains_must_be_positive(self):
        with pytest.raises(ValueError):
            Gains(0.0, 1.0, 1.0, 1.0)


class TestOperatorChannel:
    def test_delay(self):
        channel = OperatorChannel(delay=0.1)
        for step in range(50):
            t = step * 0.01
            channel.push(t, Pose(np.eye(3), [t, 0.0, 0.0]), np.zeros(6))
        pose, _ = channel.delayed(0.3)
        assert pose.translation[0] == pytest.approx(0.2)
        first, _ = channel.delayed(0.05)
        assert first.translation[0] == 0.0

    def test_zero_delay_is_current(self):
        channel = OperatorChannel()
        channel.push(0.0, Pose.identity(), np.zeros(6))
        channel.push(0.01, GOAL, np.ones(6))
        pose, twist = channel.delayed(0.01)
        assert pose is GOAL and np.array_equal(twist, np.ones(6))

    def test_ordering_and_empty(self):
        channel = OperatorChannel()
        with pytest.raises(LookupError):
            channel.delayed(0.0)
        channel.push(1.0, GOAL, np.zeros(6))
        with pytest.raises(ValueError):
            channel.push(0.5, GOAL, np.zeros(6))


class TestFailures:
    def test_overlap_rejected(self):
        windows = [FailureWindow(t_start=0.0, t_end=2.0), FailureWindow(t_start=1.0, t_end=3.0)]
        with pytest.raises(OverlappingWindows):
            FailureSchedule(windows)
        with pytest.raises(ValueError):
            AutonomyConfig(failures=windows)

    def test_window_bounds(self):
        schedule = FailureSchedule([FailureWindow(t_start=2.0, t_end=4.0, severity=0.7)])
        assert schedule.active(1.99) is None
        assert schedule.severity(2.0) == 0.7
        assert schedule.active(4.0) is None

    def test_sinusoid_frequency(self):
        window = FailureWindow(t_start=1.0, t_end=3.0, mode="vf_sinusoid", frequency=10.0, amplitude=0.1)
        dt = 0.001
        t = 1.0 + np.arange(2000) * dt
        signal = np.array([sinusoid_offset(window, s)[0] for s in t])
        spectrum = np.abs(np.fft.rfft(signal))
        freqs = np.fft.rfftfreq(len(signal), dt)
        assert freqs[np.argmax(spectrum)] == pytest.approx(10.0)
        assert np.max(np.abs(signal)) == pytest.approx(0.1, rel=1e-3)

    def test_sinusoid_leaves_covariance(self):
        window = FailureWindow(t_start=0.0, t_end=1.0, mode="vf_sinusoid")
        perception = inject_failure(ScriptedPerception(), [window])
        result = perception.perceive(0.5)
        assert not result.corrupted
        assert np.allclose(result.cov.variances(), 1e-4)
        shaken = perception.target(GOAL, 0.525)
        assert shaken.translation[0] != GOAL.translation[0]
        assert np.array_equal(perception.target(GOAL, 1.5).translation, GOAL.translation)

    def test_corruption_uses_failure_result(self):
        perception = inject_failure(ScriptedPerception(failure_correction=WRONG_TARGET), [corruption_window()])
        assert np.allclose(perception.perceive(1.0).correction.matrix(), np.eye(4))
        failed = perception.perceive(5.0)
        assert failed.corrupted
        assert np.allclose(failed.correction.translation, [0.0, 0.0, -0.8])


class TestPooledPerception:
    def test_draws_are_seeded(self):
        nominal = [PerceptionResult(Pose(np.eye(3), [i, 0.0, 0.0]), Covariance6.diagonal([1e-4] * 6)) for i in range(5)]
        corrupted = [PerceptionResult(Pose.identity(), Covariance6.diagonal([1.0] * 6), corrupted=True)]
        pool = PerceptionPool(nominal, corrupted)
        first = PooledPerception(pool, seed=3)
        second = PooledPerception(pool, seed=3)
        xs = [first.perceive(0.1 * i, 0.0).correction.translation[0] for i in range(10)]
        ys = [second.perceive(0.1 * i, 0.0).correction.translation[0] for i in range(10)]
        assert xs == ys
        hit = first.perceive(2.0, 1.0)
        assert hit.corrupted and hit.produced_at == 2.0
        assert pool.traces() == pytest.approx([6e-4] * 5)


class TestEpisodeHelpers:
    def test_corridor_deviation(self):
        start, goal = np.zeros(3), np.array([1.0, 0.0, 0.0])
        assert corridor_deviation(np.array([0.5, 0.2, 0.0]), start, goal) == pytest.approx(0.2)
        assert corridor_deviation(np.array([2.0, 0.0, 0.0]), start, goal) == pytest.approx(1.0)
        assert corridor_deviation(np.array([0.0, 0.3, 0.0]), start, start) == pytest.approx(0.3)

    def test_start_pose_is_seeded(self):
        cfg = AutonomyConfig()
        a, b = start_pose(GOAL, cfg, seed=4), start_pose(GOAL, cfg, seed=4)
        assert np.array_equal(a.matrix(), b.matrix())
        assert np.allclose(a.translation - GOAL.translation, cfg.start_offset)

    def test_log_csv(self, tmp_path):
        log = EpisodeLog()
        log.append(np.arange(len(COLUMNS), dtype=float))
        log.append(np.arange(len(COLUMNS), dtype=float) * 0.5)
        back = EpisodeLog.from_csv(log.to_csv(tmp_path / "episode.csv"))
        assert np.array_equal(back.as_array(), log.as_array())


class TestEpisodes:
    def test_teleop_alpha_is_one(self):
        cfg = episode_config("vanilla_teleop", timeout=2.0)
        result = run_episode(cfg, GOAL, ScriptedPerception(), BETA)
        assert np.all(result.log.column("alpha") == ALPHA_TELEOP)
        assert result.metrics.failure_reason == "timeout"
        assert result.metrics.steps == len(result.log)

    def test_assistance_is_faster(self):
        teleop = run_episode(episode_config("vanilla_teleop"), GOAL, ScriptedPerception(), BETA, seed=1)
        spirit = run_episode(episode_config("spirit"), GOAL, ScriptedPerception(), BETA, seed=1)
        assert teleop.metrics.success and spirit.metrics.success
        assert spirit.metrics.completion_time < teleop.metrics.completion_time

    def test_spirit_survives_perception_failure(self):
        failing = ScriptedPerception(failure_correction=WRONG_TARGET)
        cfg = episode_config("spirit", failures=[corruption_window()])
        result = run_episode(cfg, GOAL, failing, BETA, seed=2)
        assert result.metrics.success
        assert alpha_matches_trace(result.log, BETA)
        inside = result.log.column("failure_active") == 1.0
        assert np.all(result.log.column("alpha")[inside & (result.log.column("perception_t") >= 2.0)] == ALPHA_TELEOP)

    def test_vf_follows_wrong_target(self):
        failing = ScriptedPerception(failure_correction=WRONG_TARGET)
        cfg = episode_config("vanilla_vf", failures=[corruption_window()])
        result = run_episode(cfg, GOAL, failing, BETA, seed=2)
        assert not result.metrics.success
        assert result.metrics.failure_reason in ("corridor", "force_limit", "torque_limit")

    def test_deterministic(self):
        cfg = episode_config("spirit", timeout=3.0)
        a = run_episode(cfg, GOAL, ScriptedPerception(), BETA, seed=5)
        b = run_episode(cfg, GOAL, ScriptedPerception(), BETA, seed=5)
        assert np.array_equal(a.log.as_array(), b.log.as_array())
        assert math.isfinite(a.metrics.mean_force)

    def test_teleop_wrench_ignores_autonomy_target(self):
        cfg = episode_config("vanilla_teleop", timeout=15.0, failures=[corruption_window()])
        nominal = run_episode(cfg, GOAL, ScriptedPerception(), BETA, seed=3)
        wrong = run_episode(cfg, GOAL, ScriptedPerception(failure_correction=WRONG_TARGET), BETA, seed=3)
        inside = nominal.log.column("failure_active") == 1.0
        assert inside.any()
        assert not np.array_equal(nominal.log.column("s_a_z"), wrong.log.column("s_a_z"))
        assert not np.array_equal(nominal.log.block("F_a"), wrong.log.block("F_a"))
        assert np.array_equal(nominal.log.block("F"), wrong.log.block("F"))
        assert np.array_equal(nominal.log.block("F_h"), wrong.log.block("F_h"))
        assert np.array_equal(nominal.log.block("v"), wrong.log.block("v"))
