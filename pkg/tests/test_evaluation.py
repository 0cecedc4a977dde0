"""Tests for artifact layout, ablation aggregation, the autonomy study and report rendering."""

import asyncio
import json
import math

import numpy as np
import pytest

from src.autonomy.episode import EpisodeMetrics
from src.autonomy.perception import ScriptedPerception
from src.errors import MissingModel
from src.evaluation.ablation import (
    ABLATION_COLUMNS,
    RUNTIME_COLUMNS,
    RegimeOutcome,
    ViewOutcome,
    aggregate,
    ablation_methods,
    read_rows,
    run_ablation,
    write_rows,
)
from src.evaluation.autonomy_study import (
    SUMMARY_COLUMNS,
    failure_schedule,
    run_autonomy_study,
    run_study,
    summarize,
)
from src.evaluation.report import render_report
from src.evaluation.stack import (
    ArtifactLayout,
    calibrate_all,
    calibrate_regime,
    generate_all,
    load_dataset,
    regime_seed,
    train_all,
)
from src.geometry.se3 import Pose, so3_exp
from src.utils.bulk_operations import run_cells, run_cells_blocking
from tests.conftest import make_tiny_config


def _square(x: int) -> int:
    return x * x


def _fail_on_three(x: int) -> int:
    if x == 3:
        raise ValueError("three")
    return x


class TestCells:
    def test_blocking_keeps_submission_order(self):
        cells = [{"x": x} for x in range(8)]
        assert run_cells_blocking(_square, cells, max_concurrent=3) == [x * x for x in range(8)]
        assert run_cells_blocking(_square, cells, max_concurrent=1) == [x * x for x in range(8)]

    def test_blocking_reraises_first_error(self):
        with pytest.raises(ValueError, match="three"):
            run_cells_blocking(_fail_on_three, [{"x": x} for x in range(5)], max_concurrent=2)

    async def test_run_cells_captures_errors(self):
        summary = await run_cells(_fail_on_three, [{"x": x} for x in range(5)], 2, labels=list("abcde"))
        assert summary.total == 5 and summary.succeeded == 4 and summary.failed == 1
        assert summary.results == [0, 1, 2, 4]
        assert summary.errors == ["d: three"]
        assert summary.success_rate() == pytest.approx(80.0)

    async def test_run_cells_rejects_bad_input(self):
        with pytest.raises(ValueError):
            await run_cells(_square, [])
        with pytest.raises(ValueError):
            await run_cells(_square, [{"x": 1}], max_concurrent=0)


class TestStack:
    def test_layout_paths(self, tmp_path):
        layout = ArtifactLayout.at(tmp_path)
        assert layout.twin_path == tmp_path / "twin.json"
        assert layout.models_dir(2) == tmp_path / "models" / "regime_2"
        assert layout.experts_dir(0) == tmp_path / "experts" / "regime_0"
        assert layout.report_path.name == "report.md"

    def test_regime_seeds(self, tiny_config):
        seeds = [regime_seed(tiny_config, r) for r in range(4)]
        assert len(set(seeds)) == 4
        assert seeds == [regime_seed(tiny_config, r) for r in range(4)]

    def test_missing_stages(self, tmp_path, tiny_config):
        layout = ArtifactLayout.at(tmp_path)
        with pytest.raises(MissingModel):
            load_dataset(layout, 0)
        with pytest.raises(MissingModel):
            calibrate_regime(tiny_config, 0, layout)


class TestAblationTables:
    def test_aggregate_pools_regimes(self):
        def outcomes(values, failed=False):
            return [ViewOutcome(v, 2 * v, 3 * v, failed) for v in values]

        a = RegimeOutcome(0, {}, {"RT": {"ID": outcomes([1.0, 3.0]), "OOD": outcomes([5.0], True)}})
        b = RegimeOutcome(1, {}, {"RT": {"ID": outcomes([2.0]), "OOD": []}})
        rows = aggregate(["RT"], [a, b])
        assert [(r.baseline, r.condition) for r in rows] == [("RT", "ID"), ("RT", "OOD")]
        assert rows[0].rot_mse == pytest.approx(2.0)
        assert rows[0].trans_mse == pytest.approx(4.0)
        assert rows[0].nll == pytest.approx(6.0)
        assert rows[0].n_views == 3 and rows[0].failures == 0
        assert rows[1].n_views == 1 and rows[1].failures == 1

    def test_aggregate_empty_cell_is_nan(self):
        rows = aggregate(["RG"], [RegimeOutcome(0, {}, {"RG": {"ID": [], "OOD": []}})])
        assert all(math.isnan(r.rot_mse) for r in rows)

    def test_refined_rows(self, tiny_config):
        assert ablation_methods(tiny_config) == ["RG", "RP", "RT", "RT+GP"]
        refined = tiny_config.model_copy(
            update={"ablation": tiny_config.ablation.model_copy(update={"report_refined": True})}
        )
        assert ablation_methods(refined)[-2:] == ["RG+ICP", "FG+ICP"]

    def test_rows_round_trip(self, tmp_path):
        rows = [{"baseline": "RT", "fps": 12.5, "median_seconds": 0.08, "repeats": 3}]
        back = read_rows(write_rows(tmp_path / "runtime.csv", RUNTIME_COLUMNS, rows))
        assert back == [{"baseline": "RT", "fps": "12.5", "median_seconds": "0.08", "repeats": "3"}]


class TestStudy:
    def test_summarize(self):
        metrics = [
            EpisodeMetrics(True, 4.0, 2.0, 0.5),
            EpisodeMetrics(True, 6.0, 4.0, 1.5),
            EpisodeMetrics(False, 9.0, 6.0, 1.0, "corridor"),
        ]
        row = summarize("spirit", "nominal", metrics)
        assert row.success_rate == pytest.approx(200.0 / 3.0)
        assert row.time_mean == pytest.approx(5.0)
        assert row.time_median == pytest.approx(5.0)
        assert row.time_std == pytest.approx(1.0)
        assert row.mean_force == pytest.approx(4.0)
        assert math.isnan(summarize("spirit", "failure", [EpisodeMetrics(False, 1.0, 0.0, 0.0)]).time_mean)

    def test_default_failure(self, tiny_config):
        [window] = failure_schedule(tiny_config)
        assert (window.t_start, window.t_end, window.severity) == (2.0, 12.0, 1.0)

    def test_run_study_writes_summary(self, tmp_path, tiny_config):
        cfg = tiny_config.model_copy(update={"autonomy": tiny_config.autonomy.model_copy(update={"timeout": 1.0})})
        goal = Pose(so3_exp([0.0, 0.0, 0.2]), [0.5, 0.0, 0.6])
        report = run_study(cfg, goal, lambda seed: ScriptedPerception(), 0.01, out_dir=tmp_path)
        assert len(report.rows) == 6
        assert report.row("spirit", "failure").episodes == 1
        with pytest.raises(KeyError):
            report.row("spirit", "unknown")
        header = (tmp_path / "summary.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.split(",") == SUMMARY_COLUMNS
        assert len(list((tmp_path / "episodes").glob("*.csv"))) == 6
        assert json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))["beta"] == 0.01


class TestReport:
    def test_empty_directory(self, tmp_path, tiny_config):
        text = render_report(tiny_config, ArtifactLayout.at(tmp_path)).read_text(encoding="utf-8")
        for heading in ("## Training", "## Calibration", "## Registration and uncertainty ablation", "## Runtime"):
            assert heading in text
        assert "_No rows._" in text
        assert "Comparisons" not in text

    def test_comparisons(self, tmp_path, tiny_config):
        layout = ArtifactLayout.at(tmp_path)
        rows = [
            {"baseline": b, "condition": "ID", "rot_mse": mse, "trans_mse": 0.01, "nll": 1.0, "n_views": 4, "failures": 0}
            for b, mse in (("RG", 0.4), ("RP", 0.1), ("RT", 0.05))
        ]
        write_rows(layout.ablation_dir / "ablation.csv", ABLATION_COLUMNS, rows)
        text = render_report(tiny_config, layout).read_text(encoding="utf-8")
        assert "- RP / RG rotation MSE: 0.25" in text
        assert "- RT / RP rotation MSE: 0.5" in text
        assert "- FP / FG rotation MSE: -" in text


@pytest.mark.slow
class TestPipeline:
    """Whole pipeline on the scaled-down configuration."""

    @pytest.fixture(scope="class")
    def built(self, tmp_path_factory):
        cfg = make_tiny_config()
        layout = ArtifactLayout.at(tmp_path_factory.mktemp("pipeline"))
        datasets = generate_all(cfg, layout)
        trained = train_all(cfg, layout)
        records = calibrate_all(cfg, layout)
        return cfg, layout, datasets, trained, records

    def test_stages(self, built):
        cfg, layout, datasets, trained, records = built
        assert [d.regime_id for d in datasets] == [0]
        assert len(datasets[0].train) + len(datasets[0].test) == cfg.dataset.n_views
        assert all(np.isfinite(v) for v in trained[0].final_losses.values())
        assert (layout.models_dir(0) / "regressor.json").is_file()
        assert records[0].sigma_n.shape == (6,)
        assert records[0].beta is not None and records[0].beta > 0

    def test_ablation_and_study(self, built):
        cfg, layout, *_ = built
        report = run_ablation(cfg, layout)
        assert len(report.rows) == 2 * len(cfg.ablation.methods)
        assert all(r.n_views == cfg.ablation.max_test_views for r in report.rows)
        assert [r["baseline"] for r in report.runtime] == cfg.ablation.methods
        study = run_autonomy_study(cfg, layout)
        assert len(study.rows) == 6 and study.beta > 0
        text = render_report(cfg, layout).read_text(encoding="utf-8")
        assert "RT+GP" in text and "spirit" in text

    def test_ablation_is_reproducible(self, built):
        cfg, layout, *_ = built
        run_ablation(cfg, layout, measure=False)
        first = (layout.ablation_dir / "ablation.csv").read_bytes()
        run_ablation(cfg, layout, measure=False)
        assert (layout.ablation_dir / "ablation.csv").read_bytes() == first
