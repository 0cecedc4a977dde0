"""
Model checkpoints and loss curves.

A checkpoint is one JSON document: layer sizes, flat float arrays per layer,
the standardization vectors, a kind tag and the hash of the config that
produced it. Floats are written by json with full repr precision, so a
save/load cycle reproduces the model bit for bit.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.errors import MissingModel
from src.regressor.mlp import MLPModel
from src.regressor.training import LossRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_VERSION = 1


def model_to_dict(model: MLPModel) -> Dict[str, Any]:
    return {
        "layer_sizes": list(model.layer_sizes),
        "weights": [W.reshape(-1).tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_shift": model.input_shift.tolist(),
        "input_scale": model.input_scale.tolist(),
        "output_shift": model.output_shift.tolist(),
        "output_scale": model.output_scale.tolist(),
        "standardized": model.standardized,
    }


def model_from_dict(data: Dict[str, Any]) -> MLPModel:
    sizes = [int(s) for s in data["layer_sizes"]]
    weights = [np.asarray(w, dtype=float).reshape(o, i) for w, i, o in zip(data["weights"], sizes, sizes[1:])]
    biases = [np.asarray(b, dtype=float) for b in data["biases"]]
    return MLPModel(
        tuple(sizes),
        weights,
        biases,
        np.asarray(data["input_shift"], dtype=float),
        np.asarray(data["input_scale"], dtype=float),
        np.asarray(data["output_shift"], dtype=float),
        np.asarray(data["output_scale"], dtype=float),
        bool(data.get("standardized", False)),
    )


def save_model(
    path: PathLike,
    model: MLPModel,
    config_hash: str = "",
    kind: str = "regressor",
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a checkpoint.

    Args:
        path: Output file
        model: Network to store
        config_hash: Hash of the producing configuration
        kind: "regressor", "weight_head" or "evidential"
        extra: Additional JSON-serializable fields
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": CHECKPOINT_VERSION, "kind": kind, "config_hash": config_hash, "model": model_to_dict(model)}
    if extra:
        doc["extra"] = extra
    path.write_text(json.dumps(doc), encoding="utf-8")
    logger.debug(f"Saved {kind} checkpoint to {path}")
    return path


def load_model(path: PathLike) -> Tuple[MLPModel, Dict[str, Any]]:
    """Read a checkpoint.

    Returns:
        (model, header) where header holds kind, config_hash and extra

    Raises:
        MissingModel: If the file does not exist
    """
    path = Path(path)
    if not path.is_file():
        raise MissingModel(f"No model checkpoint at {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    header = {k: v for k, v in doc.items() if k != "model"}
    return model_from_dict(doc["model"]), header


def write_loss_curve(path: PathLike, curve: List[LossRecord]) -> Path:
    """CSV with columns epoch, train_loss, val_loss."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for record in curve:
            writer.writerow([record.epoch, repr(float(record.train_loss)), repr(float(record.val_loss))])
    return path


def read_loss_curve(path: PathLike) -> List[LossRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            LossRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_loss"]))
            for row in csv.DictReader(fh)
        ]
