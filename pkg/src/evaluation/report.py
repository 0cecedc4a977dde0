"""
Assemble report.md from the artifacts below an output directory.

Missing stages leave their section empty rather than failing, so the report
can be rendered after any subset of the pipeline.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from src.config import ToolkitConfig, config_hash
from src.evaluation.stack import ArtifactLayout
from src.regressor.checkpoint import read_loss_curve
from src.utils.report_formatter import format_report_markdown

logger = logging.getLogger(__name__)

NETWORKS = ("regressor", "weight_head", "evidential")


def _cell(text: str) -> Union[int, float, str]:
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _read_csv(path: Path) -> List[Dict]:
    """CSV rows with numeric cells parsed; empty when the stage has not run."""
    if not path.is_file():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _regime_dirs(parent: Path) -> List[Path]:
    if not parent.is_dir():
        return []
    dirs = [d for d in parent.iterdir() if d.is_dir() and d.name.startswith("regime_")]
    return sorted(dirs, key=lambda d: int(d.name.split("_", 1)[1]))


def _calibration_records(layout: ArtifactLayout) -> List[Dict]:
    records = []
    for directory in _regime_dirs(layout.root / "experts"):
        path = directory / "calibration.json"
        if path.is_file():
            records.append(json.loads(path.read_text(encoding="utf-8")))
    return records


def _training_rows(layout: ArtifactLayout) -> List[Dict]:
    """Final train/validation loss of every network per regime."""
    rows = []
    for directory in _regime_dirs(layout.root / "models"):
        for network in NETWORKS:
            path = directory / f"loss_{network}.csv"
            if not path.is_file():
                continue
            curve = read_loss_curve(path)
            if not curve:
                continue
            rows.append(
                {
                    "regime": int(directory.name.split("_", 1)[1]),
                    "network": network,
                    "epochs": curve[-1].epoch,
                    "initial_loss": curve[0].train_loss,
                    "train_loss": curve[-1].train_loss,
                    "val_loss": curve[-1].val_loss,
                }
            )
    return rows


def render_report(cfg: ToolkitConfig, layout: ArtifactLayout) -> Path:
    """Write report.md and return its path."""
    summary_json = layout.autonomy_dir / "summary.json"
    beta = None
    if summary_json.is_file():
        beta = json.loads(summary_json.read_text(encoding="utf-8")).get("beta")
    text = format_report_markdown(
        config_hash(cfg),
        _calibration_records(layout),
        _read_csv(layout.ablation_dir / "ablation.csv"),
        _read_csv(layout.ablation_dir / "runtime.csv"),
        _read_csv(layout.autonomy_dir / "summary.csv"),
        beta,
        training=_training_rows(layout),
    )
    layout.root.mkdir(parents=True, exist_ok=True)
    layout.report_path.write_text(text, encoding="utf-8")
    logger.info(f"📝 Wrote report to {layout.report_path}")
    return layout.report_path
