"""
Report formatting utilities for experiment reports.
"""

import math
from typing import Any, Dict, List, Optional

from src.evaluation.ablation import ABLATION_COLUMNS, RUNTIME_COLUMNS
from src.evaluation.autonomy_study import SUMMARY_COLUMNS
from src.utils.formatting import format_markdown_table, format_value

TRAINING_COLUMNS = ["regime", "network", "epochs", "initial_loss", "train_loss", "val_loss"]
CALIBRATION_COLUMNS = ["regime", "sigma_n (rot)", "sigma_n (trans)", "beta", "conformal", "samples"]


def _float(value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return math.nan


def _lookup(rows: List[Dict], baseline: str, condition: str, key: str) -> float:
    for row in rows:
        if row.get("baseline") == baseline and row.get("condition") == condition:
            return _float(row.get(key))
    return math.nan


def _ratio(numerator: float, denominator: float) -> float:
    if math.isnan(numerator) or math.isnan(denominator) or denominator == 0.0:
        return math.nan
    return numerator / denominator


def calculate_metrics(ablation: List[Dict], runtime: List[Dict]) -> Dict[str, float]:
    """Headline comparisons drawn from the ablation and runtime tables.

    Args:
        ablation: Rows of ablation.csv
        runtime: Rows of runtime.csv

    Returns:
        Dictionary of ratios (NaN when a row is missing)
    """
    fps = {row.get("baseline"): _float(row.get("fps")) for row in runtime}

    def rot(baseline: str) -> float:
        return _lookup(ablation, baseline, "ID", "rot_mse")

    return {
        "rp_over_rg_rot": _ratio(rot("RP"), rot("RG")),
        "fp_over_fg_rot": _ratio(rot("FP"), rot("FG")),
        "rt_over_rp_rot": _ratio(rot("RT"), rot("RP")),
        "gp_nll_ood": _lookup(ablation, "RT+GP", "OOD", "nll"),
        "rt_nll_ood": _lookup(ablation, "RT", "OOD", "nll"),
        "gp_fps_ratio": _ratio(fps.get("RT+GP", math.nan), fps.get("RT", math.nan)),
    }


def format_calibration_section(calibration: List[Dict]) -> List[str]:
    rows = []
    for record in calibration:
        sigma = record.get("sigma_n") or []
        rows.append(
            {
                "regime": record.get("regime_id"),
                "sigma_n (rot)": _float(max(sigma[:3])) if sigma else math.nan,
                "sigma_n (trans)": _float(max(sigma[3:])) if sigma else math.nan,
                "beta": _float(record.get("beta")),
                "conformal": record.get("conformal_q") is not None,
                "samples": record.get("n_calibration"),
            }
        )
    return ["## Calibration\n", format_markdown_table(CALIBRATION_COLUMNS, rows), ""]


def format_comparisons(ablation: List[Dict], runtime: List[Dict]) -> List[str]:
    metrics = calculate_metrics(ablation, runtime)
    return [
        "**Comparisons (ID; MSE ratios below 1 favour the first method):**",
        f"- RP / RG rotation MSE: {format_value(metrics['rp_over_rg_rot'])}",
        f"- FP / FG rotation MSE: {format_value(metrics['fp_over_fg_rot'])}",
        f"- RT / RP rotation MSE: {format_value(metrics['rt_over_rp_rot'])}",
        f"- OOD NLL, RT+GP vs RT: {format_value(metrics['gp_nll_ood'])} vs {format_value(metrics['rt_nll_ood'])}",
        f"- RT+GP / RT frame rate: {format_value(metrics['gp_fps_ratio'])}",
        "",
    ]


def format_report_markdown(
    config_hash: str,
    calibration: List[Dict],
    ablation: List[Dict],
    runtime: List[Dict],
    study: List[Dict],
    beta: Optional[float] = None,
    training: Optional[List[Dict]] = None,
) -> str:
    """Format the complete experiment report in markdown.

    Args:
        config_hash: Hash of the producing configuration
        calibration: calibration.json documents, one per regime
        ablation: Rows of ablation.csv
        runtime: Rows of runtime.csv
        study: Rows of the autonomy summary.csv
        beta: Authority threshold used by the study
        training: Final losses per regime and network

    Returns:
        Formatted markdown report
    """
    report = ["# Perceptive autonomy experiment report\n", f"*Configuration `{config_hash[:12]}`*\n"]

    report.append("## Training\n")
    report.append(format_markdown_table(TRAINING_COLUMNS, training or []))
    report.append("")
    report += format_calibration_section(calibration)

    report.append("## Registration and uncertainty ablation\n")
    report.append(format_markdown_table(ABLATION_COLUMNS, ablation))
    report.append("")
    if ablation:
        report += format_comparisons(ablation, runtime)

    report.append("## Runtime\n")
    report.append(format_markdown_table(RUNTIME_COLUMNS, runtime))
    report.append("")

    report.append("## Shared autonomy study\n")
    if beta is not None:
        report.append(f"Authority threshold beta = {format_value(float(beta), 6)}\n")
    report.append(format_markdown_table(SUMMARY_COLUMNS, study))
    report.append("")
    return "\n".join(report)
