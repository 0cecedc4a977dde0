"""
On-disk formats for clouds, twins and datasets.

Dataset directory layout::

    <root>/regime_<id>/meta.json
    <root>/regime_<id>/views/NNNN.ply
    <root>/regime_<id>/labels.jsonl

All floats are written with full precision so a write/read cycle is exact.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from src.geometry.se3 import LieVector
from src.scene.dataset import RegimeDataset, ViewSample
from src.scene.primitives import Primitive

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _fmt(value: float) -> str:
    return repr(float(value))


# ============================================================
# PLY
# ============================================================


def write_ply(path: PathLike, points: np.ndarray) -> None:
    """Write an ASCII PLY with one "x y z" vertex per line."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines += [" ".join(_fmt(v) for v in row) for row in pts]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path: PathLike) -> np.ndarray:
    """Read an ASCII PLY written by write_ply (extra vertex properties are ignored)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path} is not a PLY file")
    count = 0
    header_end = None
    for i, line in enumerate(lines):
        tokens = line.split()
        if tokens[:2] == ["element", "vertex"]:
            count = int(tokens[2])
        elif tokens[:2] == ["format", "binary_little_endian"] or tokens[:2] == ["format", "binary_big_endian"]:
            raise ValueError(f"{path}: only ASCII PLY is supported")
        elif line.strip() == "end_header":
            header_end = i
            break
    if header_end is None:
        raise ValueError(f"{path}: missing end_header")
    body = lines[header_end + 1 : header_end + 1 + count]
    if len(body) != count:
        raise ValueError(f"{path}: expected {count} vertices, found {len(body)}")
    if count == 0:
        return np.zeros((0, 3))
    return np.array([[float(v) for v in row.split()[:3]] for row in body])


# ============================================================
# Twin
# ============================================================


def write_twin(path: PathLike, primitives: List[Primitive]) -> None:
    data = [p.to_dict() for p in primitives]
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_twin(path: PathLike) -> List[Primitive]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Primitive.from_dict(d) for d in data]


# ============================================================
# Datasets
# ============================================================


def regime_dir(root: PathLike, regime_id: int) -> Path:
    return Path(root) / f"regime_{regime_id}"


def write_dataset(root: PathLike, dataset: RegimeDataset) -> Path:
    """Write a regime dataset below root and return its directory."""
    out = regime_dir(root, dataset.regime_id)
    views = out / "views"
    views.mkdir(parents=True, exist_ok=True)
    samples = sorted(dataset.train + dataset.test, key=lambda s: s.index)
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for sample in samples:
            write_ply(views / f"{sample.index:04d}.ply", sample.source)
            fh.write(json.dumps({"index": sample.index, "label": sample.label.to_list()}) + "\n")
    (out / "meta.json").write_text(json.dumps(dataset.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"💾 Wrote {len(samples)} views to {out}")
    return out


def read_dataset(root: PathLike, regime_id: int) -> RegimeDataset:
    """Read a regime dataset written by write_dataset.

    Raises:
        FileNotFoundError: If the regime directory or its meta.json is missing
    """
    src = regime_dir(root, regime_id)
    meta_path = src / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"No dataset for regime {regime_id} at {src}")
    meta: Dict = json.loads(meta_path.read_text(encoding="utf-8"))
    samples: Dict[int, ViewSample] = {}
    with open(src / "labels.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            index = int(record["index"])
            samples[index] = ViewSample(
                index=index,
                source=read_ply(src / "views" / f"{index:04d}.ply"),
                label=LieVector.from_array(record["label"]),
            )
    return RegimeDataset(
        regime_id=regime_id,
        train=[samples[i] for i in meta["train_indices"]],
        test=[samples[i] for i in meta["test_indices"]],
        meta=meta,
        calibration_fraction=float(meta.get("calibration_fraction", 0.2)),
    )


def available_regimes(root: PathLike) -> List[int]:
    root = Path(root)
    if not root.is_dir():
        return []
    found = []
    for child in root.iterdir():
        if child.is_dir() and child.name.startswith("regime_") and (child / "meta.json").is_file():
            try:
                found.append(int(child.name.split("_", 1)[1]))
            except ValueError:
                continue
    return sorted(found)
