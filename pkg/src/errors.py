"""
Exception hierarchy for the perceptive autonomy toolkit.

Every error raised on purpose by the toolkit derives from ToolkitError so the
CLI and the tool server can tell expected failures from programming errors.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


# ============================================================
# Geometry
# ============================================================


class AngleNearPi(ToolkitError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class InvalidPose(ToolkitError, ValueError):
    """Rotation block is not a proper orthonormal matrix."""


# ============================================================
# Scene and data
# ============================================================


class UnknownRegime(ToolkitError, KeyError):
    """Regime id outside the digital twin's partition."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else "unknown regime"


class RejectionExhausted(ToolkitError, RuntimeError):
    """Viewpoint rejection sampling ran out of attempts."""


# ============================================================
# Registration
# ============================================================


class DegenerateNeighborhood(ToolkitError, ValueError):
    """Local neighborhood too flat in two directions to define a normal."""


class DegenerateConfiguration(ToolkitError, ValueError):
    """Weighted correspondences do not constrain a rigid transform."""


class NoHypothesisFound(ToolkitError, RuntimeError):
    """RANSAC found no hypothesis with inlier support."""


# ============================================================
# Learning and uncertainty
# ============================================================


class EmptyCorrespondences(ToolkitError, ValueError):
    """Feature input requested from an empty correspondence set."""


class DimensionMismatch(ToolkitError, ValueError):
    """Input width does not match the model's first layer."""


class NonFiniteLoss(ToolkitError, RuntimeError):
    """Training diverged to a NaN or infinite loss."""


class SingularSystem(ToolkitError, RuntimeError):
    """Kernel or precision matrix stayed singular after jitter."""


class InvalidEvidence(ToolkitError, ValueError):
    """Normal-Inverse-Gamma parameters outside their valid domain."""


class InsufficientCalibration(ToolkitError, ValueError):
    """Too few calibration samples for the requested quantile."""


# ============================================================
# Shared autonomy
# ============================================================


class EmptyValidation(ToolkitError, ValueError):
    """No validation metrics to pick an authority threshold from."""


class OverlappingWindows(ToolkitError, ValueError):
    """Failure injection windows overlap in time."""


class NonFiniteState(ToolkitError, RuntimeError):
    """Simulated robot state became NaN or infinite."""


# ============================================================
# Harness
# ============================================================


class MissingModel(ToolkitError, FileNotFoundError):
    """A learned baseline was requested before its model was trained."""


class UsageError(ToolkitError, ValueError):
    """Command-line usage error."""
