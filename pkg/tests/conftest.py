"""Shared fixtures: scaled-down configurations and scenes."""

import pytest

from src.config import (
    AblationConfig,
    AutonomyConfig,
    CameraConfig,
    DatasetConfig,
    RegistrationConfig,
    SceneConfig,
    ToolkitConfig,
    TrainConfig,
)
from src.scene.twin import build_mockup_scene


def make_tiny_config(seed: int = 0) -> ToolkitConfig:
    """Configuration small enough for a full pipeline run in seconds."""
    return ToolkitConfig(
        seed=seed,
        scene=SceneConfig(surface_density=600.0),
        camera=CameraConfig(width=48, height=36, fx=42.0, fy=42.0),
        dataset=DatasetConfig(n_views=30, split=0.8, calibration_fraction=0.5),
        registration=RegistrationConfig(
            voxel_size=0.05,
            ransac_iterations=2000,
            ransac_batch=500,
            fgr_iterations=16,
            icp_max_iterations=10,
        ),
        train=TrainConfig(
            epochs=5,
            batch_size=16,
            hidden_sizes=(16, 8),
            max_correspondences=64,
            weight_head_epochs=3,
        ),
        autonomy=AutonomyConfig(episodes=1, pool_size=3, timeout=5.0),
        ablation=AblationConfig(
            methods=["RG", "RP", "RT", "RT+GP"],
            regimes=[0],
            max_test_views=4,
            timing_repeats=2,
            max_workers=1,
        ),
    )


@pytest.fixture
def tiny_config() -> ToolkitConfig:
    return make_tiny_config()


@pytest.fixture(scope="session")
def twin():
    """Default mock-up twin at a reduced surface density."""
    return build_mockup_scene(0, SceneConfig(surface_density=1000.0))
