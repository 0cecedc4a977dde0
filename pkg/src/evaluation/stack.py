"""
Per-regime artifacts: datasets, trained models, calibrated experts.

Layout below the output directory::

    twin.json
    data/regime_<id>/...                      datasets (see src.scene.io)
    models/regime_<id>/regressor.json         RT network
    models/regime_<id>/weight_head.json       GR inlier classifier
    models/regime_<id>/evidential.json        EL network
    models/regime_<id>/loss_<name>.csv        loss curves
    models/regime_<id>/{fit,cal}_{features,targets}.npy
    experts/regime_<id>/expert.json + .bin    GP expert
    experts/regime_<id>/calibration.json      sigma_n, conformal bounds, beta
    experts/regime_<id>/calibration_report.csv
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from src.autonomy.control import select_threshold
from src.config import ToolkitConfig, TrainConfig, config_hash
from src.errors import InsufficientCalibration, MissingModel
from src.registration.partitioned import RegistrationTarget, prepare_target
from src.regressor.checkpoint import load_model, save_model, write_loss_curve
from src.regressor.features import PooledFeature
from src.regressor.mlp import MLPModel
from src.regressor.pipeline import prepare_views
from src.regressor.training import TrainingSet, train, train_weight_head
from src.scene.dataset import RegimeDataset, generate_dataset
from src.scene.io import read_dataset, write_dataset, write_twin
from src.scene.twin import DigitalTwin, build_mockup_scene
from src.uncertainty.aleatoric import attach_aleatoric, fit_aleatoric
from src.uncertainty.calibration import (
    calibrate_sigma_n,
    conformal_calibrate,
    nll,
    trace_metric,
    write_calibration_report,
)
from src.uncertainty.evidential import EvidentialModel, train_evidential
from src.uncertainty.gp import GPExpert, MoEGP, fit_expert, load_expert, save_expert
from src.uncertainty.predictive import predict_full
from src.uncertainty.types import ConformalBounds, PredictiveDistribution

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ArtifactLayout:
    """Paths of every artifact below one output directory."""

    root: Path

    @classmethod
    def at(cls, root: PathLike) -> "ArtifactLayout":
        return cls(Path(root))

    @property
    def twin_path(self) -> Path:
        return self.root / "twin.json"

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    def models_dir(self, regime_id: int) -> Path:
        return self.root / "models" / f"regime_{regime_id}"

    def experts_dir(self, regime_id: int) -> Path:
        return self.root / "experts" / f"regime_{regime_id}"

    @property
    def ablation_dir(self) -> Path:
        return self.root / "ablation"

    @property
    def autonomy_dir(self) -> Path:
        return self.root / "autonomy"

    @property
    def report_path(self) -> Path:
        return self.root / "report.md"


# ============================================================
# Scene and data
# ============================================================


def build_twin(cfg: ToolkitConfig) -> DigitalTwin:
    return build_mockup_scene(cfg.seed, cfg.scene)


def regime_ids(cfg: ToolkitConfig, twin: DigitalTwin) -> List[int]:
    """Configured regimes, validated against the twin.

    Raises:
        UnknownRegime: If a configured regime is not in the twin
    """
    for regime_id in cfg.ablation.regimes:
        twin.regime(regime_id)
    return list(cfg.ablation.regimes)


def generate_all(cfg: ToolkitConfig, layout: ArtifactLayout) -> List[RegimeDataset]:
    """Render and write the dataset of every configured regime."""
    twin = build_twin(cfg)
    layout.root.mkdir(parents=True, exist_ok=True)
    write_twin(layout.twin_path, list(twin.primitives))
    datasets = []
    for regime_id in regime_ids(cfg, twin):
        dataset = generate_dataset(twin, regime_id, cfg)
        write_dataset(layout.data_dir, dataset)
        datasets.append(dataset)
    return datasets


def load_dataset(layout: ArtifactLayout, regime_id: int) -> RegimeDataset:
    """Read a regime dataset.

    Raises:
        MissingModel: If gen-data has not produced it
    """
    try:
        return read_dataset(layout.data_dir, regime_id)
    except FileNotFoundError as e:
        raise MissingModel(f"{e}; run gen-data first") from e


def regime_seed(cfg: ToolkitConfig, regime_id: int) -> int:
    """Training seed of one regime derived from the experiment and train seeds."""
    return int(np.random.SeedSequence([cfg.seed, cfg.train.seed, regime_id]).generate_state(1)[0])


def regime_train_config(cfg: ToolkitConfig, regime_id: int) -> TrainConfig:
    return cfg.train.model_copy(update={"seed": regime_seed(cfg, regime_id)})


# ============================================================
# Training
# ============================================================


@dataclass
class TrainedModels:
    """Networks trained for one regime."""

    regime_id: int
    regressor: MLPModel
    weight_head: MLPModel
    evidential: EvidentialModel
    final_losses: Dict[str, float]


def _save_split(directory: Path, name: str, data: TrainingSet) -> None:
    np.save(directory / f"{name}_features.npy", data.X)
    np.save(directory / f"{name}_targets.npy", data.Y)


def _load_split(directory: Path, name: str) -> TrainingSet:
    features = directory / f"{name}_features.npy"
    if not features.is_file():
        raise MissingModel(f"No {name} features at {features}; run train first")
    return TrainingSet(np.load(features), np.load(directory / f"{name}_targets.npy"))


def train_regime(cfg: ToolkitConfig, twin: DigitalTwin, dataset: RegimeDataset, layout: ArtifactLayout) -> TrainedModels:
    """Train RT, the GR weight head and the EL network on the fit split.

    The calibration split (tail of the train split) serves as validation and
    its features are stored for the calibration stage.
    """
    regime_id = dataset.regime_id
    train_cfg = regime_train_config(cfg, regime_id)
    target = prepare_target(twin, regime_id, cfg.registration)
    fit_views, cal_views = dataset.calibration_split()
    fit = prepare_views(fit_views, target, cfg.registration, train_cfg)
    cal = prepare_views(cal_views, target, cfg.registration, train_cfg) if cal_views else None
    validation = cal.data if cal is not None else None

    sizes = (fit.data.X.shape[1], *train_cfg.hidden_sizes, 6)
    regressor = MLPModel.initialize(sizes, seed=train_cfg.seed)
    rt = train(regressor, fit.data, train_cfg, validation)
    head = train_weight_head(fit.weight_rows, fit.weight_labels, train_cfg)
    evidential, el = train_evidential(fit.data, train_cfg, validation)

    out = layout.models_dir(regime_id)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    save_model(out / "regressor.json", regressor, digest, kind="regressor", extra={"loss": train_cfg.loss})
    save_model(out / "weight_head.json", head.model, digest, kind="weight_head")
    evidential.save(out / "evidential.json", digest)
    write_loss_curve(out / "loss_regressor.csv", rt.curve)
    write_loss_curve(out / "loss_weight_head.csv", head.curve)
    write_loss_curve(out / "loss_evidential.csv", el.curve)
    _save_split(out, "fit", fit.data)
    if cal is not None:
        _save_split(out, "cal", cal.data)
    else:
        (out / "cal_features.npy").unlink(missing_ok=True)

    losses = {"regressor": rt.final_loss, "weight_head": head.final_loss, "evidential": el.final_loss}
    logger.info(f"✅ Trained regime {regime_id}: RT {rt.initial_loss:.4g} -> {rt.final_loss:.4g}")
    return TrainedModels(regime_id, regressor, head.model, evidential, losses)


def train_all(cfg: ToolkitConfig, layout: ArtifactLayout) -> List[TrainedModels]:
    twin = build_twin(cfg)
    return [train_regime(cfg, twin, load_dataset(layout, r), layout) for r in regime_ids(cfg, twin)]


# ============================================================
# Calibration
# ============================================================


@dataclass
class CalibrationRecord:
    """What the calibration split fixes for one regime.

    Attributes:
        regime_id: Regime
        sigma_n: Homoscedastic noise std per output
        conformal: Conformal bounds, None with too little calibration data
        beta: Authority threshold from the nominal calibration traces
        n_calibration: Calibration samples used
    """

    regime_id: int
    sigma_n: np.ndarray
    conformal: Optional[ConformalBounds]
    beta: Optional[float]
    n_calibration: int

    def to_dict(self) -> Dict:
        return {
            "regime_id": self.regime_id,
            "sigma_n": [float(s) for s in self.sigma_n],
            "conformal_q": None if self.conformal is None else [float(q) for q in self.conformal.q],
            "miscoverage": None if self.conformal is None else self.conformal.miscoverage,
            "beta": self.beta,
            "n_calibration": self.n_calibration,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CalibrationRecord":
        conformal = None
        if data.get("conformal_q") is not None:
            conformal = ConformalBounds(np.asarray(data["conformal_q"], dtype=float), float(data["miscoverage"]))
        return cls(
            int(data["regime_id"]),
            np.asarray(data["sigma_n"], dtype=float),
            conformal,
            data.get("beta"),
            int(data.get("n_calibration", 0)),
        )


def calibrate_regime(cfg: ToolkitConfig, regime_id: int, layout: ArtifactLayout) -> CalibrationRecord:
    """Fit the GP expert of one regime and calibrate every uncertainty baseline.

    Raises:
        MissingModel: If the regime has not been trained
        InsufficientCalibration: If the calibration split has fewer than 2 samples
    """
    models = layout.models_dir(regime_id)
    regressor, _ = load_model(models / "regressor.json")
    fit = _load_split(models, "fit")
    cal_path = models / "cal_features.npy"
    if not cal_path.is_file():
        raise InsufficientCalibration(f"Regime {regime_id} has no calibration split (calibration_fraction too small)")
    cal = _load_split(models, "cal")

    unc = cfg.uncertainty
    pred = regressor.forward(cal.X)
    sigma_n = calibrate_sigma_n(pred, cal.Y, unc.sigma_floor)
    expert = fit_expert(regressor, fit.X, sigma_n, unc.prior_scale, regime_id, unc.formulation, unc.jitter)
    if unc.aleatoric:
        expert = attach_aleatoric(expert, fit_aleatoric(expert, cal.X, pred - cal.Y, unc.min_calibration))

    try:
        conformal = conformal_calibrate(pred, cal.Y, unc.miscoverage)
    except InsufficientCalibration as e:
        logger.warning(f"⚠️  Regime {regime_id}: conformal bounds unavailable: {e}")
        conformal = None

    moe = MoEGP({regime_id: expert})
    dists = [predict_full(moe, regime_id, PooledFeature(x), regressor) for x in cal.X]
    traces = [trace_metric(d.cov, unc.translation_weight) for d in dists]
    beta = select_threshold(traces, unc.threshold_margin) if traces else None
    nlls = [nll(d, y) for d, y in zip(dists, cal.Y)]

    out = layout.experts_dir(regime_id)
    out.mkdir(parents=True, exist_ok=True)
    save_expert(out / "expert.json", expert, config_hash(cfg))
    write_calibration_report(out / "calibration_report.csv", pred - cal.Y, np.vstack([d.variances for d in dists]), nlls)
    record = CalibrationRecord(regime_id, sigma_n, conformal, beta, len(cal))
    (out / "calibration.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"✅ Calibrated regime {regime_id}: sigma_n={np.round(sigma_n, 5).tolist()}, beta={beta}")
    return record


def calibrate_all(cfg: ToolkitConfig, layout: ArtifactLayout) -> List[CalibrationRecord]:
    twin = build_twin(cfg)
    return [calibrate_regime(cfg, r, layout) for r in regime_ids(cfg, twin)]


# ============================================================
# Loading
# ============================================================


@dataclass
class RegimeStack:
    """Everything inference needs in one regime."""

    regime_id: int
    target: RegistrationTarget
    full_target: RegistrationTarget
    regressor: MLPModel
    weight_head: MLPModel
    evidential: EvidentialModel
    expert: GPExpert
    calibration: CalibrationRecord

    def predict(self, pf: PooledFeature) -> PredictiveDistribution:
        return predict_full(MoEGP({self.regime_id: self.expert}), self.regime_id, pf, self.regressor)


def load_calibration(layout: ArtifactLayout, regime_id: int) -> CalibrationRecord:
    path = layout.experts_dir(regime_id) / "calibration.json"
    if not path.is_file():
        raise MissingModel(f"No calibration for regime {regime_id} at {path}; run calibrate first")
    return CalibrationRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_stack(cfg: ToolkitConfig, twin: DigitalTwin, regime_id: int, layout: ArtifactLayout) -> RegimeStack:
    """Load the trained and calibrated components of one regime.

    Raises:
        MissingModel: If any stage has not run for the regime
    """
    models = layout.models_dir(regime_id)
    regressor, _ = load_model(models / "regressor.json")
    weight_head, _ = load_model(models / "weight_head.json")
    evidential = EvidentialModel.load(models / "evidential.json")
    calibration = load_calibration(layout, regime_id)
    try:
        expert = load_expert(layout.experts_dir(regime_id) / "expert.json", regressor)
    except FileNotFoundError as e:
        raise MissingModel(f"No GP expert for regime {regime_id}: {e}") from e
    return RegimeStack(
        regime_id=regime_id,
        target=prepare_target(twin, regime_id, cfg.registration, partitioned=True),
        full_target=prepare_target(twin, regime_id, cfg.registration, partitioned=False),
        regressor=regressor,
        weight_head=weight_head,
        evidential=evidential,
        expert=expert,
        calibration=calibration,
    )


def load_moe(stacks: List[RegimeStack]) -> MoEGP:
    return MoEGP({s.regime_id: s.expert for s in stacks})
