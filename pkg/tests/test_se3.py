"""Tests for the SE(3) algebra."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.errors import AngleNearPi, InvalidPose
from src.geometry.se3 import (
    Covariance6,
    LieVector,
    Pose,
    apply,
    compose,
    exp_map,
    geodesic_error,
    hat,
    head_vector,
    inverse,
    log_map,
    pose_from_head,
    rotation_log,
    so3_exp,
)


def random_lie(rng: np.random.Generator, max_angle: float = 3.0) -> LieVector:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return LieVector(axis * rng.uniform(0.0, max_angle), rng.normal(scale=0.5, size=3))


def random_pose(rng: np.random.Generator) -> Pose:
    return exp_map(random_lie(rng))


class TestHat:
    def test_zero(self):
        assert np.array_equal(hat([0.0, 0.0, 0.0]), np.zeros((3, 3)))

    def test_unit_z(self):
        K = hat([0.0, 0.0, 1.0])
        assert np.array_equal(K[:2, :2], np.array([[0.0, -1.0], [1.0, 0.0]]))

    def test_matches_cross_product(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            w, v = rng.normal(size=3), rng.normal(size=3)
            K = hat(w)
            assert np.allclose(K, -K.T)
            assert np.allclose(K @ v, np.cross(w, v), atol=1e-12)


class TestExpLog:
    def test_zero_is_identity(self):
        T = exp_map(LieVector.zero())
        assert np.allclose(T.matrix(), np.eye(4))

    def test_quarter_turn(self):
        T = exp_map(LieVector([0.0, 0.0, math.pi / 2], [0.0, 0.0, 0.0]))
        assert np.allclose(T.rotation @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)
        assert np.allclose(log_map(T).omega, [0.0, 0.0, math.pi / 2], atol=1e-12)

    def test_identity_log_is_zero(self):
        assert np.allclose(log_map(Pose.identity()).as_array(), np.zeros(6))

    def test_round_trip_1000_samples(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            y = random_lie(rng)
            back = log_map(exp_map(y))
            assert np.max(np.abs(back.as_array() - y.as_array())) < 1e-9

    def test_pose_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            T = random_pose(rng)
            again = exp_map(log_map(T))
            assert np.max(np.abs(again.matrix() - T.matrix())) < 1e-9

    def test_small_angle_branch(self):
        y = LieVector([1e-10, -2e-10, 3e-10], [0.1, 0.2, 0.3])
        T = exp_map(y)
        assert np.allclose(log_map(T).as_array(), y.as_array(), atol=1e-12)

    def test_near_pi_raises(self):
        T = Pose(so3_exp([0.0, 0.0, math.pi]), np.zeros(3))
        with pytest.raises(AngleNearPi):
            log_map(T)

    def test_rotation_log_extends_to_pi(self):
        R = so3_exp([0.0, math.pi, 0.0])
        omega = rotation_log(R)
        assert math.isclose(np.linalg.norm(omega), math.pi, rel_tol=1e-9)
        assert np.allclose(so3_exp(omega), R, atol=1e-9)

    def test_exp_output_is_valid_pose(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            R = exp_map(random_lie(rng)).rotation
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert math.isclose(np.linalg.det(R), 1.0, abs_tol=1e-9)


class TestGroupOperations:
    def test_group_axioms(self):
        rng = np.random.default_rng(4)
        P = rng.normal(size=(50, 3))
        for _ in range(50):
            A, B = random_pose(rng), random_pose(rng)
            assert np.allclose(compose(A, inverse(A)).matrix(), np.eye(4), atol=1e-9)
            assert np.allclose(compose(Pose.identity(), A).matrix(), A.matrix())
            assert np.allclose(inverse(inverse(A)).matrix(), A.matrix(), atol=1e-12)
            assert np.allclose(apply(A, apply(inverse(A), P)), P, atol=1e-9)
            assert np.allclose(apply(compose(A, B), P), apply(A, apply(B, P)), atol=1e-9)

    def test_invalid_rotation_rejected(self):
        with pytest.raises(InvalidPose):
            Pose(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(InvalidPose):
            Pose(np.eye(3) * 1.01)

    def test_serialization_is_row_major(self):
        T = Pose(np.eye(3), np.array([1.0, 2.0, 3.0]))
        values = T.to_list()
        assert len(values) == 16
        assert (values[3], values[7], values[11]) == (1.0, 2.0, 3.0)
        assert np.array_equal(Pose.from_list(values).matrix(), T.matrix())


class TestGeodesicError:
    def test_identical(self):
        T = Pose(so3_exp([0.1, 0.2, 0.3]), [1.0, 2.0, 3.0])
        assert geodesic_error(T, T) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_quarter_turn(self):
        A = Pose.identity()
        B = Pose(so3_exp([0.0, 0.0, math.pi / 2]))
        rot, trans = geodesic_error(A, B)
        assert rot == pytest.approx(math.pi / 2, abs=1e-12)
        assert trans == 0.0

    def test_matches_quaternion_oracle_and_is_symmetric(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            A, B = random_pose(rng), random_pose(rng)
            oracle = Rotation.from_matrix(A.rotation.T @ B.rotation).magnitude()
            rot, trans = geodesic_error(A, B)
            assert abs(rot - oracle) < 1e-9
            assert trans == pytest.approx(np.linalg.norm(A.translation - B.translation))
            assert geodesic_error(B, A) == pytest.approx((rot, trans), abs=1e-9)


class TestHeadConvention:
    def test_head_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            T = random_pose(rng)
            assert np.allclose(pose_from_head(head_vector(T)).matrix(), T.matrix(), atol=1e-9)

    def test_translation_is_plain(self):
        head = np.array([0.0, 0.0, 1.0, 0.5, -0.5, 2.0])
        assert np.array_equal(pose_from_head(head).translation, head[3:])


class TestCovariance6:
    def test_rejects_asymmetric_and_indefinite(self):
        m = np.eye(6)
        m[0, 1] = 0.5
        with pytest.raises(ValueError):
            Covariance6(m)
        with pytest.raises(ValueError):
            Covariance6.diagonal([1.0, 1.0, 1.0, 1.0, 1.0, -1.0])

    def test_diagonal(self):
        cov = Covariance6.diagonal([1, 2, 3, 4, 5, 6])
        assert np.array_equal(cov.variances(), np.arange(1.0, 7.0))
