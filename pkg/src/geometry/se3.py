"""
SE(3) / se(3) algebra.

Rigid transforms, their 6-D Lie-algebra coordinates and the 6x6 covariances
expressed in them. Everything here is a pure function over small numpy
arrays; the value types are frozen dataclasses and safe to share between
threads.

Two ways to turn a 6-vector into a pose are exposed on purpose:

- exp_map: the exact SE(3) exponential, translation through the left Jacobian.
- pose_from_head: the regressor's head convention, R = exp(hat(omega)) and
  the translation taken as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np

from src.errors import AngleNearPi, InvalidPose

# Below this angle the Rodrigues coefficients switch to their Taylor series.
SMALL_ANGLE = 1e-8
# The Jacobian coefficients cancel much earlier than sin/cos do.
_JACOBIAN_SERIES_ANGLE = 1e-3
# log_map refuses rotations with trace(R) <= -1 + PI_TRACE_MARGIN.
PI_TRACE_MARGIN = 1e-6
ORTHONORMAL_TOL = 1e-9

PointCloud = np.ndarray


# ============================================================
# Value types
# ============================================================


@dataclass(frozen=True)
class LieVector:
    """Coordinates (omega, tau) of an element of se(3).

    Attributes:
        omega: Rotation coordinates in radians (3,)
        tau: Translation coordinates in meters (3,)
    """

    omega: np.ndarray
    tau: np.ndarray

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=float).reshape(3)
        tau = np.asarray(self.tau, dtype=float).reshape(3)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(tau))):
            raise ValueError(f"LieVector entries must be finite, got {omega}, {tau}")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "tau", tau)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "LieVector":
        arr = np.asarray(values, dtype=float).reshape(6)
        return cls(omega=arr[:3].copy(), tau=arr[3:].copy())

    @classmethod
    def zero(cls) -> "LieVector":
        return cls(omega=np.zeros(3), tau=np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.omega, self.tau])

    def to_list(self) -> list:
        """Serialize as 6 floats [omega, tau]."""
        return [float(v) for v in self.as_array()]


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + t.

    Attributes:
        rotation: 3x3 orthonormal matrix with det +1
        translation: 3-vector in meters
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidPose("Pose entries must be finite")
        ortho_err = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if ortho_err > ORTHONORMAL_TOL:
            raise InvalidPose(f"Rotation is not orthonormal (max |R^T R - I| = {ortho_err:.3e})")
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise InvalidPose(f"Rotation determinant must be +1, got {det:.12f}")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[float]]) -> "Pose":
        m = np.asarray(matrix, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def to_list(self) -> list:
        """Serialize as 16 row-major floats."""
        return [float(v) for v in self.matrix().reshape(-1)]

    @classmethod
    def from_list(cls, values: Iterable[float]) -> "Pose":
        return cls.from_matrix(np.asarray(list(values), dtype=float).reshape(4, 4))


@dataclass(frozen=True)
class Covariance6:
    """Symmetric PSD 6x6 covariance over (rotation, translation) coordinates.

    Units are rad^2 on the rotation block and m^2 on the translation block.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float).reshape(6, 6)
        if not np.all(np.isfinite(m)):
            raise ValueError("Covariance entries must be finite")
        if np.max(np.abs(m - m.T)) > 1e-9:
            raise ValueError("Covariance must be symmetric")
        min_eig = float(np.min(np.linalg.eigvalsh(m)))
        if min_eig < -1e-9:
            raise ValueError(f"Covariance must be PSD, smallest eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def diagonal(cls, variances: Sequence[float]) -> "Covariance6":
        return cls(np.diag(np.asarray(variances, dtype=float).reshape(6)))

    def variances(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


# ============================================================
# so(3)
# ============================================================


def hat(omega: Sequence[float]) -> np.ndarray:
    """Skew-symmetric matrix with hat(omega) @ v == cross(omega, v)."""
    w1, w2, w3 = (float(v) for v in np.asarray(omega, dtype=float).reshape(3))
    return np.array(
        [
            [0.0, -w3, w2],
            [w3, 0.0, -w1],
            [-w2, w1, 0.0],
        ]
    )


def vee(matrix: np.ndarray) -> np.ndarray:
    """Inverse of hat for the antisymmetric part of a 3x3 matrix."""
    m = np.asarray(matrix, dtype=float)
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def so3_exp(omega: Sequence[float]) -> np.ndarray:
    """Rodrigues' formula."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    K = hat(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_angle(rotation: np.ndarray) -> float:
    """Angle of a rotation matrix, computed with atan2 for accuracy near 0."""
    s = float(np.linalg.norm(vee(rotation)))
    c = 0.5 * (float(np.trace(rotation)) - 1.0)
    return math.atan2(s, c)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Principal-branch logarithm of a rotation matrix.

    Raises:
        AngleNearPi: If the rotation angle is within the ambiguous band near pi
    """
    R = np.asarray(rotation, dtype=float).reshape(3, 3)
    trace = float(np.trace(R))
    if trace <= -1.0 + PI_TRACE_MARGIN:
        raise AngleNearPi(f"Rotation angle too close to pi (trace={trace:.9f})")
    axis_sin = vee(R)
    s = float(np.linalg.norm(axis_sin))
    theta = math.atan2(s, 0.5 * (trace - 1.0))
    if theta < SMALL_ANGLE:
        return axis_sin
    return (theta / s) * axis_sin


def rotation_log(rotation: np.ndarray) -> np.ndarray:
    """so3_log extended to the pi band, where it returns pi times the rotation axis."""
    try:
        return so3_log(rotation)
    except AngleNearPi:
        eigvals, eigvecs = np.linalg.eigh(0.5 * (rotation + rotation.T))
        return math.pi * eigvecs[:, int(np.argmax(eigvals))]


def _jacobian_coefficients(theta: float) -> Tuple[float, float]:
    """Coefficients of hat and hat^2 in the left Jacobian."""
    if theta < _JACOBIAN_SERIES_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return (
        (1.0 - math.cos(theta)) / (theta * theta),
        (theta - math.sin(theta)) / (theta ** 3),
    )


def left_jacobian(omega: Sequence[float]) -> np.ndarray:
    """SO(3) left Jacobian, also the V matrix of the SE(3) exponential."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    K = hat(omega)
    a, b = _jacobian_coefficients(theta)
    return np.eye(3) + a * K + b * (K @ K)


def left_jacobian_inverse(omega: Sequence[float]) -> np.ndarray:
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    K = hat(omega)
    if theta < _JACOBIAN_SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        c = (1.0 - half / math.tan(half)) / (theta * theta)
    return np.eye(3) - 0.5 * K + c * (K @ K)


# ============================================================
# SE(3)
# ============================================================


def exp_map(y: LieVector) -> Pose:
    """Exact SE(3) exponential of (omega, tau)."""
    rotation = so3_exp(y.omega)
    translation = left_jacobian(y.omega) @ y.tau
    return Pose(rotation, translation)


def log_map(T: Pose) -> LieVector:
    """Exact SE(3) logarithm on the principal branch.

    Raises:
        AngleNearPi: If the rotation angle is too close to pi
    """
    omega = so3_log(T.rotation)
    tau = left_jacobian_inverse(omega) @ T.translation
    return LieVector(omega=omega, tau=tau)


def compose(A: Pose, B: Pose) -> Pose:
    """A after B: x -> A(B(x))."""
    return Pose(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def inverse(T: Pose) -> Pose:
    Rt = T.rotation.T
    return Pose(Rt, -Rt @ T.translation)


def apply(T: Pose, points: PointCloud) -> PointCloud:
    """Transform an (N, 3) cloud."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return pts @ T.rotation.T + T.translation


def geodesic_error(T_est: Pose, T_gt: Pose) -> Tuple[float, float]:
    """Rotation angle of the relative rotation (rad) and translation distance (m)."""
    relative = T_est.rotation.T @ T_gt.rotation
    rot_err = rotation_angle(relative)
    trans_err = float(np.linalg.norm(T_est.translation - T_gt.translation))
    return rot_err, trans_err


# ============================================================
# Regressor head convention
# ============================================================


def pose_from_head(head: Sequence[float]) -> Pose:
    """Pose from a regressor output (omega, t): R = exp(hat(omega)), t as-is."""
    arr = np.asarray(head, dtype=float).reshape(6)
    return Pose(so3_exp(arr[:3]), arr[3:].copy())


def head_vector(T: Pose) -> np.ndarray:
    """Regressor target (log_SO3(R), t) for a pose."""
    return np.concatenate([so3_log(T.rotation), T.translation])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Closest proper rotation to a nearly orthonormal matrix."""
    U, _, Vt = np.linalg.svd(np.asarray(rotation, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +z pointing from eye to target.

    Camera axes follow the pinhole convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("look_at needs distinct eye and target")
    z = forward / norm
    up = np.asarray(up, dtype=float)
    right = np.cross(z, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = right / np.linalg.norm(right)
    y = np.cross(z, x)
    return Pose(orthonormalize(np.column_stack([x, y, z])), eye)
