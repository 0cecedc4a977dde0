"""
Per-regime training and test sets.

Each sample is one rendered view: the source cloud in the camera frame and
the exact se(3) label of its camera-to-twin pose. The target cloud is the
regime partition and is not duplicated per sample.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import ToolkitConfig, config_hash
from src.geometry.se3 import LieVector, Pose, exp_map, log_map
from src.scene.camera import CameraModel, render_depth_cloud, sample_viewpoints
from src.scene.twin import DigitalTwin, twin_hash

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ViewSample:
    """One rendered view.

    Attributes:
        index: View index within the regime dataset
        source: Cloud in the camera frame
        label: log_map of the camera-to-twin pose
    """

    index: int
    source: np.ndarray = field(repr=False)
    label: LieVector

    @property
    def pose(self) -> Pose:
        return exp_map(self.label)


@dataclass
class RegimeDataset:
    """Train/test split for one regime.

    Attributes:
        regime_id: Regime the views were rendered for
        train: Training views (the calibration split is their tail)
        test: Held-out views
        meta: Provenance written to meta.json
    """

    regime_id: int
    train: List[ViewSample]
    test: List[ViewSample]
    meta: Dict = field(default_factory=dict)
    calibration_fraction: float = 0.2

    def calibration_split(self) -> Tuple[List[ViewSample], List[ViewSample]]:
        """Split the training views into (fit, calibration); calibration is the tail."""
        n_cal = int(round(len(self.train) * self.calibration_fraction))
        if n_cal == 0:
            return list(self.train), []
        return list(self.train[:-n_cal]), list(self.train[-n_cal:])


def view_seed(seed: int, regime_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, regime_id, index])


def generate_dataset(
    twin: DigitalTwin,
    regime_id: int,
    config: Optional[ToolkitConfig] = None,
    n_views: Optional[int] = None,
    split: Optional[float] = None,
    seed: Optional[int] = None,
) -> RegimeDataset:
    """Render a regime dataset and split it into disjoint train/test sets.

    Args:
        twin: Scene to render
        regime_id: Regime whose nominal camera the views jitter around
        config: Experiment config (defaults when omitted)
        n_views: Override of config.dataset.n_views
        split: Override of config.dataset.split (train fraction)
        seed: Override of config.seed

    Returns:
        RegimeDataset with round(n_views * split) training views

    Raises:
        UnknownRegime: If the regime does not exist
        RejectionExhausted: Propagated from viewpoint sampling

    Example:
        >>> ds = generate_dataset(twin, 0, n_views=1200, split=0.8)
        >>> len(ds.train), len(ds.test)
        (960, 240)
    """
    config = config or ToolkitConfig()
    n_views = n_views if n_views is not None else config.dataset.n_views
    split = split if split is not None else config.dataset.split
    seed = seed if seed is not None else config.seed
    if not 0.0 < split < 1.0:
        raise ValueError(f"split must lie in (0, 1), got {split}")

    regime = twin.regime(regime_id)
    poses = sample_viewpoints(twin, regime, n_views, seed=[seed, regime_id], config=config.viewpoints)
    camera = CameraModel.from_config(config.camera, Pose.identity())

    samples = []
    for index, pose in enumerate(poses):
        cloud = render_depth_cloud(twin, camera.with_pose(pose), rng=view_seed(seed, regime_id, index))
        samples.append(ViewSample(index=index, source=cloud, label=log_map(pose)))

    order = np.random.default_rng([seed, regime_id]).permutation(n_views)
    n_train = int(round(n_views * split))
    train_idx = sorted(int(i) for i in order[:n_train])
    test_idx = sorted(int(i) for i in order[n_train:])

    meta = {
        "regime_id": regime_id,
        "seed": seed,
        "n_views": n_views,
        "split": split,
        "calibration_fraction": config.dataset.calibration_fraction,
        "train_indices": train_idx,
        "test_indices": test_idx,
        "twin_hash": twin_hash(twin),
        "config_hash": config_hash(config),
        "camera": config.camera.model_dump(mode="json"),
    }
    dataset = RegimeDataset(
        regime_id=regime_id,
        train=[samples[i] for i in train_idx],
        test=[samples[i] for i in test_idx],
        meta=meta,
        calibration_fraction=config.dataset.calibration_fraction,
    )
    logger.info(
        f"📦 Regime {regime_id}: rendered {n_views} views "
        f"({len(dataset.train)} train / {len(dataset.test)} test)"
    )
    return dataset
