"""
Command-line surface of the toolkit.

    perceptive-autonomy <command> [--config PATH|default] [--seed N] [--out DIR]

Commands run one pipeline stage each and write below --out:
gen-data, train, calibrate, ablation, autonomy, report.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import json
import logging
import sys
from typing import Callable, Dict, List, NoReturn, Optional, Sequence

from src.config import DEFAULT_CONFIG, ToolkitConfig, canonical_json, configure_logging, load_config, with_seed
from src.errors import UsageError
from src.evaluation.ablation import run_ablation
from src.evaluation.autonomy_study import run_autonomy_study
from src.evaluation.report import render_report
from src.evaluation.stack import ArtifactLayout, calibrate_all, generate_all, train_all

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises UsageError instead of exiting with status 2."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


# ============================================================
# Commands
# ============================================================


def cmd_gen_data(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    datasets = generate_all(cfg, layout)
    views = ", ".join(f"regime {d.regime_id}: {len(d.train)} train / {len(d.test)} test" for d in datasets)
    return f"Generated datasets in {layout.data_dir} ({views})"


def cmd_train(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    trained = train_all(cfg, layout)
    lines = [f"Trained {len(trained)} regime(s)"]
    for t in trained:
        losses = ", ".join(f"{k} {v:.4g}" for k, v in t.final_losses.items())
        lines.append(f"  regime {t.regime_id}: {losses}")
    return "\n".join(lines)


def cmd_calibrate(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    records = calibrate_all(cfg, layout)
    lines = [f"Calibrated {len(records)} expert(s)"]
    for r in records:
        beta = "n/a" if r.beta is None else f"{r.beta:.6g}"
        lines.append(f"  regime {r.regime_id}: beta {beta}, {r.n_calibration} calibration views")
    return "\n".join(lines)


def cmd_ablation(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    report = run_ablation(cfg, layout, measure=not args.skip_runtime)
    return f"Wrote {len(report.rows)} ablation rows to {layout.ablation_dir}"


def cmd_autonomy(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    report = run_autonomy_study(cfg, layout)
    lines = [f"Autonomy study (beta {report.beta:.6g}) written to {layout.autonomy_dir}"]
    for row in report.rows:
        lines.append(f"  {row.mode}/{row.condition}: success {row.success_rate:.1f}%")
    return "\n".join(lines)


def cmd_report(cfg: ToolkitConfig, layout: ArtifactLayout, args: argparse.Namespace) -> str:
    return f"Wrote {render_report(cfg, layout)}"


COMMANDS: Dict[str, Callable[[ToolkitConfig, ArtifactLayout, argparse.Namespace], str]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "ablation": cmd_ablation,
    "autonomy": cmd_autonomy,
    "report": cmd_report,
}


def build_parser() -> ToolkitArgumentParser:
    common = ToolkitArgumentParser(add_help=False)
    common.add_argument("--config", default=DEFAULT_CONFIG, help="Config JSON path or 'default'")
    common.add_argument("--seed", type=int, default=None, help="Override the experiment seed")
    common.add_argument("--out", default="out", help="Artifact directory")

    parser = ToolkitArgumentParser(prog="perceptive-autonomy", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=ToolkitArgumentParser)
    sub.required = True
    for name in COMMANDS:
        command = sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__[4:].replace("_", " "))
        if name == "ablation":
            command.add_argument("--skip-runtime", action="store_true", help="Do not write runtime.csv")
    return parser


def _write_config(layout: ArtifactLayout, cfg: ToolkitConfig) -> None:
    layout.root.mkdir(parents=True, exist_ok=True)
    document = json.loads(canonical_json(cfg))
    (layout.root / "config.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    configure_logging()
    tokens: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(tokens)
        cfg = with_seed(load_config(args.config), args.seed)
    except UsageError as e:
        print(f"❌ Usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    layout = ArtifactLayout.at(args.out)
    try:
        _write_config(layout, cfg)
        message = COMMANDS[args.command](cfg, layout, args)
    except UsageError as e:
        print(f"❌ Usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"✅ {message}")
    return EXIT_OK
