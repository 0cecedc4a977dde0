"""
Experiment pipeline tools.

Each tool runs one pipeline stage against the artifact directory. Stages are
CPU-bound, so they run in a worker thread to keep the server loop responsive.
"""

import asyncio
from typing import Optional

from pydantic import BaseModel, Field

from src.evaluation.ablation import ABLATION_COLUMNS, run_ablation
from src.evaluation.autonomy_study import STUDY_MODES, SUMMARY_COLUMNS, run_autonomy_study
from src.evaluation.stack import calibrate_all, generate_all, train_all
from src.server import get_config, get_layout, mcp
from src.utils.formatting import format_error, format_markdown_table, format_success

# ============================================================
# Pydantic Models for Input Validation
# ============================================================


class StageInput(BaseModel):
    """Fields shared by every pipeline stage."""

    seed: Optional[int] = Field(None, description="Override the experiment seed", ge=0)
    out_dir: Optional[str] = Field(None, description="Artifact directory (defaults to PAT_OUTPUT_DIR)")
    config: Optional[str] = Field(None, description="Config JSON path or 'default' (defaults to PAT_CONFIG)")


class GenerateDataInput(StageInput):
    """Input model for dataset generation."""

    n_views: Optional[int] = Field(None, description="Views rendered per regime (train + test)", gt=0)


class TrainInput(StageInput):
    """Input model for training."""

    epochs: Optional[int] = Field(None, description="Override the number of epochs", gt=0)


class CalibrateInput(StageInput):
    """Input model for calibration."""


class AblationInput(StageInput):
    """Input model for the ablation study."""

    measure_runtime: bool = Field(True, description="Also measure frames per second per method")


class AutonomyInput(StageInput):
    """Input model for the shared autonomy study."""

    episodes: Optional[int] = Field(None, description="Episodes per (mode, condition) cell", gt=0)
    regime_id: Optional[int] = Field(None, description="Regime whose perception stack is used", ge=0)


# ============================================================
# Pipeline Tools
# ============================================================


@mcp.tool
async def generate_data(input: GenerateDataInput) -> str:
    """Render the digital twin and write the per-regime datasets.

    Args:
        input: Seed, artifact directory and optional view counts

    Returns:
        Summary of the written datasets

    Example:
        {
            "seed": 0,
            "n_views": 400
        }
    """

    try:
        cfg = get_config(input.seed, input.config)
        if input.n_views is not None:
            cfg = cfg.model_copy(update={"dataset": cfg.dataset.model_copy(update={"n_views": input.n_views})})
        layout = get_layout(input.out_dir)

        datasets = await asyncio.to_thread(generate_all, cfg, layout)

        text = format_success(f"Generated {len(datasets)} dataset(s) in {layout.data_dir}\n\n")
        for d in datasets:
            text += f"- Regime {d.regime_id}: {len(d.train)} train / {len(d.test)} test views\n"
        return text

    except Exception as e:
        return format_error(f"Failed to generate data: {str(e)}")


@mcp.tool
async def train_models(input: TrainInput) -> str:
    """Train the pose regressor, weight head and evidential network per regime.

    Requires generate_data to have run on the same artifact directory.

    Args:
        input: Seed, artifact directory and optional epoch override

    Returns:
        Final losses per regime
    """

    try:
        cfg = get_config(input.seed, input.config)
        if input.epochs is not None:
            cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"epochs": input.epochs})})
        layout = get_layout(input.out_dir)

        trained = await asyncio.to_thread(train_all, cfg, layout)

        rows = [{"regime": t.regime_id, **t.final_losses} for t in trained]
        text = format_success(f"Trained {len(trained)} regime(s)\n\n")
        text += format_markdown_table(["regime", "regressor", "weight_head", "evidential"], rows)
        return text

    except Exception as e:
        return format_error(f"Failed to train models: {str(e)}")


@mcp.tool
async def calibrate_experts(input: CalibrateInput) -> str:
    """Fit the GP experts and calibrate noise, conformal bounds and the authority threshold.

    Args:
        input: Seed and artifact directory

    Returns:
        Noise level and threshold beta per regime
    """

    try:
        cfg = get_config(input.seed, input.config)
        layout = get_layout(input.out_dir)

        records = await asyncio.to_thread(calibrate_all, cfg, layout)

        rows = [
            {
                "regime": r.regime_id,
                "sigma_n (max)": float(max(r.sigma_n)),
                "beta": float("nan") if r.beta is None else r.beta,
                "conformal": r.conformal is not None,
                "samples": r.n_calibration,
            }
            for r in records
        ]
        text = format_success(f"Calibrated {len(records)} expert(s)\n\n")
        text += format_markdown_table(["regime", "sigma_n (max)", "beta", "conformal", "samples"], rows)
        return text

    except Exception as e:
        return format_error(f"Failed to calibrate experts: {str(e)}")


@mcp.tool
async def run_ablation_study(input: AblationInput) -> str:
    """Evaluate every registration/uncertainty method on nominal and corrupted views.

    Args:
        input: Seed, artifact directory and whether to measure runtime

    Returns:
        Ablation table (rotation/translation MSE and NLL per method and condition)
    """

    try:
        cfg = get_config(input.seed, input.config)
        layout = get_layout(input.out_dir)

        report = await asyncio.to_thread(run_ablation, cfg, layout, input.measure_runtime)

        text = format_success(f"Ablation written to {layout.ablation_dir}\n\n")
        text += format_markdown_table(ABLATION_COLUMNS, [r.to_dict() for r in report.rows])
        if report.runtime:
            text += "\n\n**Runtime:**\n"
            text += format_markdown_table(["baseline", "fps"], report.runtime)
        return text

    except Exception as e:
        return format_error(f"Failed to run ablation: {str(e)}")


@mcp.tool
async def run_autonomy(input: AutonomyInput) -> str:
    """Run seeded shared-autonomy episodes for every authority mode.

    Modes: vanilla_teleop, vanilla_vf and spirit, each with and without a
    perception failure window.

    Args:
        input: Seed, artifact directory, episodes per cell and regime

    Returns:
        Summary table (success rate, completion time, mean force and torque)
    """

    try:
        cfg = get_config(input.seed, input.config)
        update = {}
        if input.episodes is not None:
            update["episodes"] = input.episodes
        if input.regime_id is not None:
            update["regime_id"] = input.regime_id
        if update:
            cfg = cfg.model_copy(update={"autonomy": cfg.autonomy.model_copy(update=update)})
        layout = get_layout(input.out_dir)

        report = await asyncio.to_thread(run_autonomy_study, cfg, layout)

        text = format_success(f"Autonomy study over {len(STUDY_MODES)} modes (beta {report.beta:.6g})\n\n")
        text += format_markdown_table(SUMMARY_COLUMNS, [r.to_dict() for r in report.rows])
        return text

    except Exception as e:
        return format_error(f"Failed to run autonomy study: {str(e)}")
