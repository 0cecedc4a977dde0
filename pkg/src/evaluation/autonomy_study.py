"""
Seeded episode batches comparing the three authority modes.

Each (mode, condition) cell runs cfg.autonomy.episodes episodes with paired
seeds, with and without an injected perception failure, and the study
summarizes success rate, completion time and mean wrenches per cell.
"""

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.autonomy.control import select_threshold
from src.autonomy.episode import EpisodeMetrics, EpisodeResult, run_episode
from src.autonomy.perception import (
    LivePerception,
    PerceptionPool,
    PerceptionSource,
    PerceptionStack,
    PooledPerception,
)
from src.config import FailureWindow, ToolkitConfig
from src.errors import InsufficientCalibration
from src.evaluation.stack import ArtifactLayout, build_twin, load_moe, load_stack
from src.geometry.se3 import Pose
from src.utils.bulk_operations import run_cells_blocking

logger = logging.getLogger(__name__)

STUDY_MODES = ("vanilla_teleop", "vanilla_vf", "spirit")
CONDITIONS = ("nominal", "failure")
DEFAULT_FAILURE = FailureWindow(t_start=2.0, t_end=12.0, mode="cloud_corruption", severity=1.0)
SUMMARY_COLUMNS = [
    "mode",
    "condition",
    "episodes",
    "success_rate",
    "time_mean",
    "time_std",
    "time_median",
    "mean_force",
    "mean_torque",
]

SourceFactory = Callable[[int], PerceptionSource]


@dataclass(frozen=True)
class StudyRow:
    """Summary of one (mode, condition) cell; times are over successful episodes."""

    mode: str
    condition: str
    episodes: int
    success_rate: float
    time_mean: float
    time_std: float
    time_median: float
    mean_force: float
    mean_torque: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class StudyReport:
    rows: List[StudyRow]
    episodes: Dict[str, List[EpisodeMetrics]]
    beta: float

    def row(self, mode: str, condition: str) -> StudyRow:
        for row in self.rows:
            if row.mode == mode and row.condition == condition:
                return row
        raise KeyError(f"No study row for {mode}/{condition}")


def episode_seed(cfg: ToolkitConfig, index: int) -> int:
    return cfg.seed * 10_000 + index


def failure_schedule(cfg: ToolkitConfig) -> List[FailureWindow]:
    """Configured failure windows, or the default 10 s severity-1 corruption."""
    return list(cfg.autonomy.failures) or [DEFAULT_FAILURE]


def summarize(mode: str, condition: str, metrics: Sequence[EpisodeMetrics]) -> StudyRow:
    times = [m.completion_time for m in metrics if m.success]
    nan = float("nan")
    return StudyRow(
        mode=mode,
        condition=condition,
        episodes=len(metrics),
        success_rate=100.0 * sum(m.success for m in metrics) / len(metrics) if metrics else nan,
        time_mean=float(np.mean(times)) if times else nan,
        time_std=float(np.std(times)) if times else nan,
        time_median=float(statistics.median(times)) if times else nan,
        mean_force=float(np.mean([m.mean_force for m in metrics])) if metrics else nan,
        mean_torque=float(np.mean([m.mean_torque for m in metrics])) if metrics else nan,
    )


def run_cell(
    cfg: ToolkitConfig,
    mode: str,
    condition: str,
    goal: Pose,
    source_factory: SourceFactory,
    beta: float,
    log_dir: Optional[Path] = None,
) -> List[EpisodeResult]:
    """Run the paired episodes of one (mode, condition) cell."""
    windows = failure_schedule(cfg) if condition == "failure" else []
    episode_cfg = cfg.autonomy.model_copy(update={"mode": mode, "failures": windows})
    results = []
    for i in range(cfg.autonomy.episodes):
        seed = episode_seed(cfg, i)
        result = run_episode(
            episode_cfg, goal, source_factory(seed), beta, seed=seed,
            translation_weight=cfg.uncertainty.translation_weight,
        )
        if log_dir is not None:
            result.log.to_csv(log_dir / f"{mode}_{condition}_{seed:06d}.csv")
        results.append(result)
    return results


def run_study(
    cfg: ToolkitConfig,
    goal: Pose,
    source_factory: SourceFactory,
    beta: float,
    out_dir: Optional[Path] = None,
    modes: Sequence[str] = STUDY_MODES,
    conditions: Sequence[str] = CONDITIONS,
) -> StudyReport:
    """Run every (mode, condition) cell and write the summary when out_dir is set."""
    cells, labels = [], []
    for mode in modes:
        for condition in conditions:
            log_dir = out_dir / "episodes" if out_dir is not None else None
            cells.append(
                {"cfg": cfg, "mode": mode, "condition": condition, "goal": goal,
                 "source_factory": source_factory, "beta": beta, "log_dir": log_dir}
            )
            labels.append(f"{mode}/{condition}")
    batches = run_cells_blocking(run_cell, cells, cfg.ablation.max_workers, labels)

    rows, episodes = [], {}
    for cell, results in zip(cells, batches):
        metrics = [r.metrics for r in results]
        row = summarize(cell["mode"], cell["condition"], metrics)
        rows.append(row)
        episodes[f"{row.mode}/{row.condition}"] = metrics
        logger.info(f"🤖 {row.mode}/{row.condition}: success {row.success_rate:.1f}%, median time {row.time_median:.2f}s")

    report = StudyReport(rows, episodes, beta)
    if out_dir is not None:
        write_summary(out_dir, report)
    return report


def write_summary(out_dir: Path, report: StudyReport) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in report.rows:
            values = row.to_dict()
            writer.writerow([repr(values[c]) if isinstance(values[c], float) else values[c] for c in SUMMARY_COLUMNS])
    document = {
        "beta": report.beta,
        "rows": [r.to_dict() for r in report.rows],
        "episodes": {k: [m.to_dict() for m in v] for k, v in report.episodes.items()},
    }
    (out_dir / "summary.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_autonomy_study(cfg: ToolkitConfig, layout: ArtifactLayout) -> StudyReport:
    """Run the study on the trained perception stack of cfg.autonomy.regime_id.

    The pooled source precomputes nominal and corrupted perception once;
    beta is the larger of the calibrated threshold and the threshold of the
    pool's nominal traces.

    Raises:
        MissingModel: If the regime is not trained and calibrated
    """
    twin = build_twin(cfg)
    regime_id = cfg.autonomy.regime_id
    stack = load_stack(cfg, twin, regime_id, layout)
    perception = PerceptionStack(twin, regime_id, stack.target, stack.regressor, load_moe([stack]), cfg)
    goal = twin.regime(regime_id).anchor_pose
    margin = cfg.uncertainty.threshold_margin
    betas = [stack.calibration.beta] if stack.calibration.beta is not None else []

    if cfg.autonomy.perception_source == "pooled":
        severity = max((w.severity for w in failure_schedule(cfg)), default=1.0)
        pool = PerceptionPool.build(perception, cfg.autonomy.pool_size, severity, seed=cfg.seed)
        betas.append(select_threshold(pool.traces(cfg.uncertainty.translation_weight), margin))

        def source_factory(seed: int) -> PerceptionSource:
            return PooledPerception(pool, seed=seed)
    else:
        def source_factory(seed: int) -> PerceptionSource:
            return LivePerception(perception, seed=seed)

    if not betas:
        raise InsufficientCalibration(f"Regime {regime_id} has no calibrated beta; recalibrate with a calibration split")
    beta = max(betas)
    logger.info(f"🎚️  Authority threshold beta={beta:.6g} for regime {regime_id}")
    return run_study(cfg, goal, source_factory, beta, out_dir=layout.autonomy_dir)
