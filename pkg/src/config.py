"""
Experiment configuration.

One JSON document fully determines an experiment. Every section is a
pydantic model with validated fields; unknown keys are rejected so a typo in
a config file fails loudly instead of silently falling back to a default.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import OverlappingWindows, UsageError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "default"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ============================================================
# Scene and data generation
# ============================================================


class SceneConfig(_Section):
    """Digital twin geometry and partitioning."""

    pipe_count: int = Field(default=3, ge=3, description="Parallel pipes in the mock-up")
    surface_density: float = Field(
        default=4000.0, gt=0, description="Target cloud sampling density (points/m^2)"
    )
    crop_radius: float = Field(default=1.5, gt=0, description="Regime crop radius (m)")


class CameraConfig(_Section):
    """Pinhole depth camera."""

    width: int = Field(default=160, gt=0)
    height: int = Field(default=120, gt=0)
    fx: float = Field(default=140.0, gt=0)
    fy: float = Field(default=140.0, gt=0)
    cx: Optional[float] = Field(default=None, description="Defaults to the image center")
    cy: Optional[float] = Field(default=None, description="Defaults to the image center")
    depth_noise_sigma: float = Field(default=0.002, ge=0, description="Depth noise std (m)")
    max_range: float = Field(default=6.0, gt=0, description="Rays beyond this miss (m)")


class ViewpointConfig(_Section):
    """Viewpoint rejection sampling around a regime's nominal camera."""

    position_std: float = Field(default=0.2, ge=0, description="Per-axis std (m)")
    min_clearance: float = Field(default=0.7, ge=0, description="Distance to geometry (m)")
    rotation_perturbation: float = Field(default=0.1, ge=0, description="Per-axis bound (rad)")
    translation_perturbation: float = Field(default=0.1, ge=0, description="Per-axis bound (m)")
    attempts_per_view: int = Field(default=100, gt=0)


class CorruptionConfig(_Section):
    """Out-of-distribution corruption applied to measured clouds."""

    max_bias: float = Field(default=0.25, ge=0, description="Rigid offset bound (m)")
    max_variance: float = Field(default=0.5, ge=0, description="Per-point noise bound (m^2)")
    floor: float = Field(default=0.5, ge=0, le=1, description="Lower end of the draw range")


class DatasetConfig(_Section):
    """Per-regime dataset sizes."""

    n_views: int = Field(default=1200, gt=0)
    split: float = Field(default=0.8, gt=0, lt=1, description="Train fraction")
    calibration_fraction: float = Field(
        default=0.2, ge=0, lt=1, description="Tail of the train split held out for calibration"
    )


# ============================================================
# Registration
# ============================================================


class RegistrationConfig(_Section):
    """Classical registration backbone."""

    voxel_size: float = Field(default=0.025, gt=0, description="Voxel size nu (m)")
    normal_k: int = Field(default=20, gt=2)
    fpfh_radius_factor: float = Field(default=5.0, gt=0, description="FPFH radius in voxels")
    fpfh_max_nn: int = Field(default=100, gt=0)
    ransac_iterations: int = Field(default=100_000, gt=0)
    ransac_batch: int = Field(default=1000, gt=0)
    ransac_confidence: float = Field(default=0.999, gt=0, lt=1)
    ransac_distance_factor: float = Field(default=1.5, gt=0, description="Inlier threshold in voxels")
    ransac_edge_ratio: float = Field(default=0.9, gt=0, le=1)
    fgr_iterations: int = Field(default=64, gt=0)
    fgr_division_factor: float = Field(default=1.4, gt=1)
    fgr_max_correspondence_distance: float = Field(default=0.025, gt=0)
    fgr_tuple_test: bool = True
    icp_max_iterations: int = Field(default=50, gt=0)
    icp_tolerance: float = Field(default=1e-6, gt=0)
    icp_threshold_factor: float = Field(default=2.0, gt=0, description="ICP cut-off in voxels")
    refine_classical: bool = Field(
        default=False, description="Apply ICP after RG/FG/RP/FP in the ablation"
    )


# ============================================================
# Learning
# ============================================================


class TrainConfig(_Section):
    """Regressor training schedule."""

    epochs: int = Field(default=200, gt=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    loss: Literal["lie_mse", "weighted_rigid"] = "lie_mse"
    hidden_sizes: Tuple[int, int] = (128, 16)
    inlier_factor: float = Field(default=3.0, gt=0, description="Inlier residual in voxels")
    max_correspondences: int = Field(default=512, gt=0, description="Rows kept per sample")
    weight_head_epochs: int = Field(default=50, gt=0)
    evidential_lambda: float = Field(default=0.01, ge=0)
    seed: int = 0

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_hidden(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if any(h <= 0 for h in v):
            raise ValueError(f"hidden_sizes must be positive, got {v}")
        return v


class UncertaintyConfig(_Section):
    """GP/NTK covariance and the calibration baselines."""

    prior_scale: float = Field(default=1.0, gt=0, description="sigma_p^2")
    jitter: float = Field(default=1e-8, gt=0)
    sigma_floor: float = Field(default=1e-6, gt=0)
    aleatoric: bool = True
    min_calibration: int = Field(default=10, gt=0)
    miscoverage: float = Field(default=0.1, gt=0, lt=1)
    translation_weight: float = Field(
        default=1.0, gt=0, description="Trace weight on the translation block"
    )
    threshold_margin: float = Field(default=0.1, ge=0)
    formulation: Literal["auto", "function", "weight"] = "auto"


# ============================================================
# Shared autonomy
# ============================================================


class FailureWindow(_Section):
    """One perception failure injection window."""

    t_start: float = Field(ge=0)
    t_end: float = Field(gt=0)
    mode: Literal["cloud_corruption", "vf_sinusoid"] = "cloud_corruption"
    severity: float = Field(default=1.0, ge=0, le=1)
    frequency: float = Field(default=10.0, gt=0, description="Hz")
    amplitude: float = Field(default=0.1, ge=0, description="m")

    @model_validator(mode="after")
    def _ordered(self) -> "FailureWindow":
        if self.t_end <= self.t_start:
            raise ValueError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        return self


class AutonomyConfig(_Section):
    """Episode loop, gains and the scripted operator."""

    mode: Literal["vanilla_teleop", "vanilla_vf", "spirit"] = "spirit"
    regime_id: int = Field(default=0, ge=0)
    dt: float = Field(default=0.01, gt=0)
    perception_period: float = Field(default=0.2, gt=0)
    timeout: float = Field(default=500.0, gt=0)
    delay: float = Field(default=0.1, ge=0, description="Operator channel delay T (s)")
    mass: Tuple[float, float, float, float, float, float] = (10.0, 10.0, 10.0, 1.0, 1.0, 1.0)
    damping: float = Field(default=20.0, gt=0)
    kp_operator: float = Field(default=100.0, gt=0)
    kd_operator: float = Field(default=20.0, gt=0)
    kp_autonomy: float = Field(default=100.0, gt=0)
    kd_autonomy: float = Field(default=20.0, gt=0)
    max_speed: float = Field(default=0.1, gt=0, description="Operator speed bound (m/s)")
    max_angular_speed: float = Field(default=0.3, gt=0, description="rad/s")
    approach_gain: float = Field(default=1.0, gt=0, description="Proportional slowdown (1/s)")
    reaction_lag: float = Field(default=0.3, ge=0)
    aim_bias_translation: float = Field(default=0.05, ge=0, description="m")
    aim_bias_rotation: float = Field(default=0.14, ge=0, description="rad")
    aim_bias_time_constant: float = Field(default=20.0, gt=0, description="s")
    confused_operator: bool = False
    confused_factor: float = Field(default=3.0, ge=1)
    start_offset: Tuple[float, float, float] = (-0.3, -0.35, 0.2)
    start_rotation_offset: float = Field(default=0.17, ge=0, description="rad")
    success_translation: float = Field(default=0.02, gt=0)
    success_rotation: float = Field(default=0.0873, gt=0)
    force_limit: float = Field(default=60.0, gt=0)
    torque_limit: float = Field(default=25.0, gt=0)
    corridor: float = Field(default=0.25, gt=0)
    dwell_time: float = Field(default=0.0, ge=0)
    perception_source: Literal["live", "pooled"] = "pooled"
    pool_size: int = Field(default=20, gt=0)
    episodes: int = Field(default=20, gt=0)
    failures: List[FailureWindow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _disjoint_windows(self) -> "AutonomyConfig":
        check_windows(self.failures)
        return self


def check_windows(windows: List[FailureWindow]) -> None:
    """Raise OverlappingWindows if any two failure windows share time."""
    ordered = sorted(windows, key=lambda w: w.t_start)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.t_start < prev.t_end:
            raise OverlappingWindows(
                f"Failure windows [{prev.t_start}, {prev.t_end}) and "
                f"[{cur.t_start}, {cur.t_end}) overlap"
            )


# ============================================================
# Evaluation
# ============================================================


class AblationConfig(_Section):
    """Ablation matrix."""

    methods: List[str] = Field(
        default_factory=lambda: ["RG", "FG", "RP", "FP", "GR", "RT", "RT+EL", "RT+CP", "RT+GP"]
    )
    regimes: List[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    ood_severity: float = Field(default=1.0, ge=0, le=1)
    max_test_views: Optional[int] = Field(default=None, gt=0)
    timing_repeats: int = Field(default=100, gt=0)
    report_refined: bool = False
    max_workers: int = Field(default=4, gt=0)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v: List[str]) -> List[str]:
        known = {"RG", "FG", "RP", "FP", "GR", "RT", "RT+EL", "RT+CP", "RT+GP"}
        unknown = [m for m in v if m not in known]
        if unknown:
            raise ValueError(f"Unknown ablation methods: {unknown}")
        return v


class ToolkitConfig(_Section):
    """Complete experiment configuration."""

    seed: int = 0
    scene: SceneConfig = Field(default_factory=SceneConfig)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    viewpoints: ViewpointConfig = Field(default_factory=ViewpointConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    registration: RegistrationConfig = Field(default_factory=RegistrationConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    uncertainty: UncertaintyConfig = Field(default_factory=UncertaintyConfig)
    autonomy: AutonomyConfig = Field(default_factory=AutonomyConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)


# ============================================================
# Loading and hashing
# ============================================================


def load_config(source: Union[str, Path, None] = DEFAULT_CONFIG) -> ToolkitConfig:
    """Load a configuration document.

    Args:
        source: Path to a JSON file, or "default" / None for built-in defaults

    Returns:
        Validated ToolkitConfig

    Raises:
        UsageError: If the file is missing, not JSON, or fails validation
    """
    if source is None or str(source) == DEFAULT_CONFIG:
        return ToolkitConfig()
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"Config file {path} is not valid JSON: {e}") from e
    try:
        return ToolkitConfig.model_validate(data)
    except ValueError as e:
        raise UsageError(f"Invalid config {path}: {e}") from e


def canonical_json(cfg: BaseModel) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: BaseModel) -> str:
    """SHA-256 over the canonical JSON dump of a config section."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def with_seed(cfg: ToolkitConfig, seed: Optional[int]) -> ToolkitConfig:
    """Copy of cfg with the top-level seed replaced (None keeps it)."""
    if seed is None:
        return cfg
    return cfg.model_copy(update={"seed": int(seed)})


def configure_logging() -> None:
    """Load .env and configure root logging; called by entry points only."""
    load_dotenv()
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO"), format=LOG_FORMAT)
