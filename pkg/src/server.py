"""
Perceptive Autonomy MCP Server - FastMCP Implementation

Main server file that initializes FastMCP and registers all tools.
Tools operate on one artifact directory (PAT_OUTPUT_DIR) with one base
configuration (PAT_CONFIG); every tool may override the seed and directory.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from fastmcp import FastMCP

from src.config import DEFAULT_CONFIG, ToolkitConfig, configure_logging, load_config, with_seed
from src.evaluation.stack import ArtifactLayout

configure_logging()
logger = logging.getLogger(__name__)

# Initialize FastMCP server
mcp = FastMCP(name="perceptive-autonomy")

_output_dir = Path(os.getenv("PAT_OUTPUT_DIR", "out"))
_config_source = os.getenv("PAT_CONFIG", DEFAULT_CONFIG)

logger.info("✅ Perceptive autonomy MCP server initialized")
logger.info(f"   Artifacts: {_output_dir}")
logger.info(f"   Config: {_config_source}")


# Dependency injection helpers for tools
def get_layout(out_dir: Optional[str] = None) -> ArtifactLayout:
    """Artifact layout of out_dir, or of the server's default directory."""
    return ArtifactLayout.at(out_dir or _output_dir)


def get_config(seed: Optional[int] = None, config: Optional[str] = None) -> ToolkitConfig:
    """Base configuration (or the given config file) with an optional seed override.

    Raises:
        UsageError: If the configuration cannot be loaded
    """
    return with_seed(load_config(config or _config_source), seed)


# Import ALL tool modules (decorators auto-register tools)
logger.info("Loading tool modules...")

try:
    from src.tools import artifacts  # noqa: F401 - 2 tools: status, describe_twin
    from src.tools import experiments  # noqa: F401 - 5 tools: generate_data, train_models, calibrate_experts, run_ablation_study, run_autonomy

    logger.info("✅ All 7 tools loaded successfully")
except ImportError as e:
    logger.warning(f"⚠️  Some tool modules failed to import: {e}")
    raise
