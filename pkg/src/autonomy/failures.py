"""
Perception failure injection.

A schedule holds disjoint time windows. Inside a cloud_corruption window the
measured cloud is corrupted before inference; inside a vf_sinusoid window
the VF target is shaken along the world x axis.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.autonomy.perception import PerceptionResult, PerceptionSource
from src.config import FailureWindow, check_windows
from src.geometry.se3 import Pose

SINUSOID_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class FailureSchedule:
    """Disjoint failure windows, sorted by start time.

    Raises:
        OverlappingWindows: If two windows share time
    """

    windows: Sequence[FailureWindow] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.windows, key=lambda w: w.t_start))
        check_windows(list(ordered))
        object.__setattr__(self, "windows", ordered)

    def active(self, t: float) -> Optional[FailureWindow]:
        """Window containing t (start inclusive, end exclusive)."""
        for window in self.windows:
            if window.t_start <= t < window.t_end:
                return window
        return None

    def severity(self, t: float) -> float:
        window = self.active(t)
        if window is None or window.mode != "cloud_corruption":
            return 0.0
        return window.severity


def sinusoid_offset(window: FailureWindow, t: float) -> np.ndarray:
    """amplitude * sin(2 pi f (t - t_start)) along the world x axis."""
    phase = 2.0 * math.pi * window.frequency * (t - window.t_start)
    return window.amplitude * math.sin(phase) * SINUSOID_AXIS


@dataclass
class FailingPerception:
    """A perception source with a failure schedule applied to its stream."""

    source: PerceptionSource
    schedule: FailureSchedule

    def perceive(self, t: float) -> PerceptionResult:
        return self.source.perceive(t, self.schedule.severity(t))

    def target(self, nominal: Pose, t: float) -> Pose:
        """VF target at time t, shaken inside vf_sinusoid windows."""
        window = self.schedule.active(t)
        if window is None or window.mode != "vf_sinusoid":
            return nominal
        return Pose(nominal.rotation, nominal.translation + sinusoid_offset(window, t))

    def failure_active(self, t: float) -> bool:
        return self.schedule.active(t) is not None


def inject_failure(source: PerceptionSource, windows: List[FailureWindow]) -> FailingPerception:
    """Wrap a perception source with a failure schedule (empty leaves it unchanged).

    Raises:
        OverlappingWindows: If two windows share time
    """
    return FailingPerception(source, FailureSchedule(tuple(windows)))
