"""
Response formatting utilities for consistent output across all tools.
"""

import math
from typing import Any, Dict, List, Sequence


def format_value(value: Any, digits: int = 4) -> str:
    """Render one table cell; floats use significant digits, NaN shows as a dash."""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        return f"{value:.{digits}g}"
    return str(value)


def format_markdown_table(columns: Sequence[str], rows: Sequence[Dict[str, Any]], digits: int = 4) -> str:
    """Markdown table with one row per mapping.

    Args:
        columns: Keys to show, in order
        rows: Row mappings (missing keys render empty)
        digits: Significant digits for floats

    Returns:
        Markdown table, or a placeholder line without rows
    """
    if not rows:
        return "_No rows._"
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(format_value(row.get(c, ""), digits) for c in columns) + " |")
    return "\n".join(lines)


def format_twin(twin_dict: Dict) -> str:
    """Summarize a digital twin (as produced by DigitalTwin.to_dict).

    Args:
        twin_dict: Twin description with primitives and regimes

    Returns:
        Formatted markdown string
    """
    primitives = twin_dict.get("primitives", [])
    regimes = twin_dict.get("regimes", [])
    text = f"✅ Digital twin (seed {twin_dict.get('seed')}): {len(primitives)} primitive(s), {len(regimes)} regime(s)\n\n"
    text += "**Primitives:**\n"
    for p in primitives:
        text += f"- {p.get('name') or p.get('kind')} ({p.get('kind')}) at {format_vector(_position(p['pose']))}\n"
    text += "\n**Regimes:**\n"
    for r in regimes:
        text += (
            f"- **{r.get('name')}** (ID: {r.get('id')}) anchor {format_vector(_position(r['anchor_pose']))}, "
            f"crop radius {format_value(float(r.get('crop_radius', math.nan)))} m, "
            f"{r.get('target_points', 0)} target points\n"
        )
    return text


def _position(pose: Sequence[float]) -> List[float]:
    """Translation of a pose serialized as 16 row-major floats."""
    return [pose[3], pose[7], pose[11]]


def format_vector(values: Sequence[float], digits: int = 3) -> str:
    return "(" + ", ".join(f"{float(v):.{digits}f}" for v in values) + ")"


def format_regime_status(statuses: List[Dict[str, Any]]) -> str:
    """One line per regime telling which artifacts exist."""
    if not statuses:
        return "No regimes configured."
    text = ""
    for s in statuses:
        marks = " ".join(f"{'✅' if s.get(k) else '⬜'} {k}" for k in ("dataset", "models", "expert"))
        text += f"- Regime {s['regime_id']}: {marks}\n"
    return text


def format_error(error_message: str) -> str:
    """Format error message consistently.

    Args:
        error_message: Error message string

    Returns:
        Formatted error string with ❌ prefix
    """

    return f"❌ Error: {error_message}"


def format_success(message: str) -> str:
    """Format success message consistently.

    Args:
        message: Success message string

    Returns:
        Formatted success string with ✅ prefix
    """

    return f"✅ {message}"
