"""
Ablation over registration baselines and uncertainty estimators.

Every method runs on the same test views of every configured regime, once on
the measured clouds (ID) and once on corrupted copies (OOD). Accuracy and
NLL go to ablation.csv/json; frame rates are measured separately, single
threaded, and written to runtime.csv so the accuracy table stays
byte-reproducible.
"""

import csv
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import ToolkitConfig
from src.errors import ToolkitError
from src.evaluation.stack import (
    ArtifactLayout,
    RegimeStack,
    build_twin,
    load_dataset,
    load_stack,
    regime_ids,
)
from src.geometry.se3 import Covariance6, LieVector, Pose, geodesic_error, pose_from_head, rotation_log
from src.registration.features import prepare_feature_cloud
from src.registration.partitioned import register_to_target
from src.regressor.pipeline import SampleFeatures, extract_features, predict_pose_weighted
from src.scene.camera import corrupt_cloud
from src.scene.dataset import ViewSample
from src.scene.twin import DigitalTwin
from src.uncertainty.calibration import conformal_cov, nll
from src.uncertainty.types import PredictiveDistribution
from src.utils.bulk_operations import run_cells_blocking

logger = logging.getLogger(__name__)

CONDITIONS = ("ID", "OOD")
CLASSICAL = {"RG": ("ransac", False), "FG": ("fgr", False), "RP": ("ransac", True), "FP": ("fgr", True)}
REFINED_ROWS = ("RG+ICP", "FG+ICP")
ISOTROPIC_METHODS = tuple(CLASSICAL) + REFINED_ROWS + ("GR",)
ABLATION_COLUMNS = ["baseline", "condition", "rot_mse", "trans_mse", "nll", "n_views", "failures"]
RUNTIME_COLUMNS = ["baseline", "fps", "median_seconds", "repeats"]

# variance reported for a view the method could not process
FAILED_VARIANCE = 1e3


def pose_head(pose: Pose) -> np.ndarray:
    """Head coordinates (omega, t) of any pose, including the pi band."""
    return np.concatenate([rotation_log(pose.rotation), pose.translation])


@dataclass(frozen=True)
class ReportRow:
    """One (baseline, condition) cell of the ablation table."""

    baseline: str
    condition: str
    rot_mse: float
    trans_mse: float
    nll: float
    n_views: int = 0
    failures: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ViewOutcome:
    rot_sq: float
    trans_sq: float
    nll: float
    failed: bool = False


@dataclass
class RegimeOutcome:
    """Per-view outcomes of one regime, keyed by method then condition."""

    regime_id: int
    isotropic: Dict[str, float]
    outcomes: Dict[str, Dict[str, List[ViewOutcome]]] = field(default_factory=dict)


# ============================================================
# Methods
# ============================================================


def ablation_methods(cfg: ToolkitConfig) -> List[str]:
    methods = list(cfg.ablation.methods)
    if cfg.ablation.report_refined:
        methods += [m for m in REFINED_ROWS if m not in methods]
    return methods


def _classical(method: str, cfg: ToolkitConfig) -> Tuple[str, bool, bool]:
    """(algorithm, partitioned, refine) of a classical row."""
    base, _, suffix = method.partition("+")
    algorithm, partitioned = CLASSICAL[base]
    return algorithm, partitioned, suffix == "ICP" or cfg.registration.refine_classical


def _isotropic(variance: float) -> Covariance6:
    return Covariance6.diagonal([variance] * 6)


def estimate(
    method: str,
    stack: RegimeStack,
    cfg: ToolkitConfig,
    sample: SampleFeatures,
    seed: int,
    isotropic: Optional[Dict[str, float]] = None,
) -> Tuple[Pose, PredictiveDistribution]:
    """Pose estimate and predictive distribution of one method on one view.

    Classical methods and GR carry the fixed isotropic variance calibrated
    for them; without one the variance is 1.
    """
    isotropic = isotropic or {}
    if method in CLASSICAL or method in REFINED_ROWS:
        algorithm, partitioned, refine = _classical(method, cfg)
        target = stack.target if partitioned else stack.full_target
        pose = register_to_target(sample.source, target, algorithm, cfg.registration, seed=seed, refine=refine).pose
        return pose, PredictiveDistribution(LieVector.from_array(pose_head(pose)), _isotropic(isotropic.get(method, 1.0)))
    if method == "GR":
        pose = predict_pose_weighted(stack.weight_head, sample, stack.target, cfg.registration, seed=seed).pose
        return pose, PredictiveDistribution(LieVector.from_array(pose_head(pose)), _isotropic(isotropic.get(method, 1.0)))

    pooled = sample.pooled
    if method == "RT+GP":
        dist = stack.predict(pooled)
    elif method == "RT+EL":
        dist = stack.evidential.predict(pooled)
    else:
        mean = LieVector.from_array(stack.regressor.forward(pooled.vector))
        sigma_n = stack.calibration.sigma_n
        if method == "RT+CP" and stack.calibration.conformal is not None:
            cov = conformal_cov(stack.calibration.conformal, cfg.uncertainty.sigma_floor)
        else:
            if method == "RT+CP":
                logger.warning(f"⚠️  Regime {stack.regime_id} has no conformal bounds; RT+CP uses sigma_n")
            cov = Covariance6.diagonal(sigma_n ** 2)
        dist = PredictiveDistribution(mean, cov)
    return pose_from_head(dist.mean.as_array()), dist


def _failed_estimate() -> Tuple[Pose, PredictiveDistribution]:
    return Pose.identity(), PredictiveDistribution(LieVector.zero(), _isotropic(FAILED_VARIANCE))


def _outcome(pose: Pose, dist: PredictiveDistribution, view: ViewSample, failed: bool) -> ViewOutcome:
    gt = view.pose
    rot_err, trans_err = geodesic_error(pose, gt)
    return ViewOutcome(rot_err ** 2, trans_err ** 2, nll(dist, pose_head(gt)), failed)


def _view_cloud(cfg: ToolkitConfig, regime_id: int, view: ViewSample, condition: str) -> np.ndarray:
    if condition == "ID":
        return view.source
    rng = np.random.default_rng([cfg.seed, regime_id, view.index, 17])
    return corrupt_cloud(view.source, cfg.ablation.ood_severity, config=cfg.corruption, rng=rng)


def _run_view(
    methods: Sequence[str],
    stack: RegimeStack,
    cfg: ToolkitConfig,
    cloud: np.ndarray,
    view: ViewSample,
    isotropic: Dict[str, float],
) -> Dict[str, Tuple[Pose, PredictiveDistribution, bool]]:
    try:
        sample = extract_features(cloud, stack.target, cfg.registration)
    except ToolkitError as e:
        logger.warning(f"⚠️  View {view.index} of regime {stack.regime_id} has no features: {e}")
        return {m: (*_failed_estimate(), True) for m in methods}
    results = {}
    for method in methods:
        try:
            results[method] = (*estimate(method, stack, cfg, sample, view.index, isotropic), False)
        except ToolkitError as e:
            logger.debug(f"{method} failed on view {view.index}: {e}")
            results[method] = (*_failed_estimate(), True)
    return results


# ============================================================
# Cells
# ============================================================


def calibrate_isotropic(
    methods: Sequence[str], stack: RegimeStack, cfg: ToolkitConfig, views: Sequence[ViewSample]
) -> Dict[str, float]:
    """Mean squared head residual of each fixed-covariance method on calibration views."""
    methods = [m for m in methods if m in ISOTROPIC_METHODS]
    residuals: Dict[str, List[np.ndarray]] = {m: [] for m in methods}
    for view in views:
        for method, (pose, _, failed) in _run_view(methods, stack, cfg, view.source, view, {}).items():
            if not failed:
                residuals[method].append(pose_head(pose) - pose_head(view.pose))
    floor_sq = cfg.uncertainty.sigma_floor ** 2
    variances = {}
    for method, values in residuals.items():
        variances[method] = max(float(np.mean(np.square(values))), floor_sq) if values else 1.0
    return variances


def evaluate_regime(cfg: ToolkitConfig, layout: ArtifactLayout, twin: DigitalTwin, regime_id: int) -> RegimeOutcome:
    """Run every method on the ID and OOD test views of one regime.

    Raises:
        MissingModel: If the regime is not trained and calibrated
    """
    stack = load_stack(cfg, twin, regime_id, layout)
    dataset = load_dataset(layout, regime_id)
    limit = cfg.ablation.max_test_views
    test = dataset.test[:limit] if limit else dataset.test
    _, cal_views = dataset.calibration_split()
    cal_views = cal_views[:limit] if limit else cal_views
    methods = ablation_methods(cfg)

    isotropic = calibrate_isotropic(methods, stack, cfg, cal_views)
    result = RegimeOutcome(regime_id, isotropic, {m: {c: [] for c in CONDITIONS} for m in methods})
    for condition in CONDITIONS:
        for view in test:
            cloud = _view_cloud(cfg, regime_id, view, condition)
            for method, (pose, dist, failed) in _run_view(methods, stack, cfg, cloud, view, isotropic).items():
                result.outcomes[method][condition].append(_outcome(pose, dist, view, failed))
    logger.info(f"✅ Ablation regime {regime_id}: {len(test)} test views x {len(methods)} methods x 2 conditions")
    return result


def aggregate(methods: Sequence[str], regimes: Sequence[RegimeOutcome]) -> List[ReportRow]:
    """One row per (method, condition), pooled over regimes."""
    rows = []
    for method in methods:
        for condition in CONDITIONS:
            outcomes = [o for r in regimes for o in r.outcomes[method][condition]]
            if not outcomes:
                rows.append(ReportRow(method, condition, float("nan"), float("nan"), float("nan")))
                continue
            rows.append(
                ReportRow(
                    baseline=method,
                    condition=condition,
                    rot_mse=float(np.mean([o.rot_sq for o in outcomes])),
                    trans_mse=float(np.mean([o.trans_sq for o in outcomes])),
                    nll=float(np.mean([o.nll for o in outcomes])),
                    n_views=len(outcomes),
                    failures=sum(o.failed for o in outcomes),
                )
            )
    return rows


# ============================================================
# Runtime
# ============================================================


def time_method(method: str, stack: RegimeStack, cfg: ToolkitConfig, cloud: np.ndarray, repeats: int) -> List[float]:
    """Wall-clock seconds of repeated single inferences from the raw cloud."""
    durations = []
    for i in range(repeats):
        start = time.perf_counter()
        try:
            if method in CLASSICAL or method in REFINED_ROWS:
                algorithm, partitioned, refine = _classical(method, cfg)
                source = prepare_feature_cloud(cloud, cfg.registration)
                target = stack.target if partitioned else stack.full_target
                register_to_target(source, target, algorithm, cfg.registration, seed=i, refine=refine)
            else:
                estimate(method, stack, cfg, extract_features(cloud, stack.target, cfg.registration), seed=i)
        except ToolkitError:
            pass
        durations.append(time.perf_counter() - start)
    return durations


def measure_runtime(cfg: ToolkitConfig, layout: ArtifactLayout, twin: DigitalTwin, regimes: Sequence[int]) -> List[Dict]:
    """Median single-threaded FPS per method over timing_repeats inferences."""
    stacks = {r: load_stack(cfg, twin, r, layout) for r in regimes}
    clouds = {}
    for regime_id in regimes:
        test = load_dataset(layout, regime_id).test
        if test:
            clouds[regime_id] = test[0].source
    rows = []
    for method in ablation_methods(cfg):
        durations: List[float] = []
        per_regime = max(1, cfg.ablation.timing_repeats // max(1, len(clouds)))
        for regime_id, cloud in clouds.items():
            durations += time_method(method, stacks[regime_id], cfg, cloud, per_regime)
        median = statistics.median(durations) if durations else float("nan")
        fps = 1.0 / median if median > 0 else float("inf")
        rows.append({"baseline": method, "fps": fps, "median_seconds": median, "repeats": len(durations)})
        logger.info(f"⏱️  {method}: {rows[-1]['fps']:.2f} FPS")
    return rows


# ============================================================
# Entry point
# ============================================================


@dataclass
class AblationReport:
    rows: List[ReportRow]
    regimes: List[RegimeOutcome]
    runtime: List[Dict]


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[Dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return path


def run_ablation(cfg: ToolkitConfig, layout: ArtifactLayout, measure: bool = True) -> AblationReport:
    """Evaluate the full (method x condition) matrix and write the reports.

    Regimes run as concurrent cells; report assembly is sequential.

    Raises:
        MissingModel: If any regime lacks data, models or calibration
    """
    twin = build_twin(cfg)
    regimes = regime_ids(cfg, twin)
    methods = ablation_methods(cfg)
    cells = [{"cfg": cfg, "layout": layout, "twin": twin, "regime_id": r} for r in regimes]
    outcomes = run_cells_blocking(
        evaluate_regime, cells, cfg.ablation.max_workers, labels=[f"regime {r}" for r in regimes]
    )
    rows = aggregate(methods, outcomes)

    out = layout.ablation_dir
    write_rows(out / "ablation.csv", ABLATION_COLUMNS, [r.to_dict() for r in rows])
    document = {
        "rows": [r.to_dict() for r in rows],
        "isotropic_variance": {str(o.regime_id): o.isotropic for o in outcomes},
        "methods": methods,
        "regimes": regimes,
    }
    (out / "ablation.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    runtime: List[Dict] = []
    if measure:
        runtime = measure_runtime(cfg, layout, twin, regimes)
        write_rows(out / "runtime.csv", RUNTIME_COLUMNS, runtime)
    logger.info(f"📊 Ablation finished: {len(rows)} rows written to {out}")
    return AblationReport(rows, outcomes, runtime)


def read_rows(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
