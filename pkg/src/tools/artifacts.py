"""
Artifact inspection tools: what has been produced, and what the twin looks like.
"""

from typing import Optional

from src.config import config_hash
from src.evaluation.stack import build_twin
from src.server import get_config, get_layout, mcp
from src.utils.formatting import format_error, format_regime_status, format_twin


@mcp.tool
async def status(out_dir: Optional[str] = None) -> str:
    """Show which pipeline artifacts exist in the artifact directory.

    Args:
        out_dir: Artifact directory (defaults to the server's PAT_OUTPUT_DIR)

    Returns:
        Artifact directory, configuration hash and per-regime dataset/model/expert status
    """

    try:
        cfg = get_config()
        layout = get_layout(out_dir)
        statuses = [
            {
                "regime_id": r,
                "dataset": (layout.data_dir / f"regime_{r}" / "meta.json").is_file(),
                "models": (layout.models_dir(r) / "regressor.json").is_file(),
                "expert": (layout.experts_dir(r) / "calibration.json").is_file(),
            }
            for r in cfg.ablation.regimes
        ]

        text = "✅ Artifact status\n\n"
        text += f"**Directory**: {layout.root}\n"
        text += f"**Config hash**: `{config_hash(cfg)[:12]}`\n"
        text += f"**Ablation results**: {'yes' if (layout.ablation_dir / 'ablation.csv').is_file() else 'no'}\n"
        text += f"**Autonomy study**: {'yes' if (layout.autonomy_dir / 'summary.csv').is_file() else 'no'}\n"
        text += f"**Report**: {'yes' if layout.report_path.is_file() else 'no'}\n\n"
        text += format_regime_status(statuses)
        return text

    except Exception as e:
        return format_error(f"Failed to read status: {str(e)}")


@mcp.tool
async def describe_twin(seed: Optional[int] = None) -> str:
    """Describe the digital twin: its primitives and task regimes.

    Args:
        seed: Experiment seed (defaults to the configured seed)

    Returns:
        Formatted list of primitives and regimes with anchor positions
    """

    try:
        twin = build_twin(get_config(seed))
        return format_twin(twin.to_dict())

    except Exception as e:
        return format_error(f"Failed to build twin: {str(e)}")
