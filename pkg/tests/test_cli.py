"""Tests for the command-line entry point."""

import json

import pytest

from src.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from src.errors import UsageError
from tests.conftest import make_tiny_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(make_tiny_config().model_dump_json(), encoding="utf-8")
    return path


def test_unknown_command():
    assert main(["bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "gen-data" in capsys.readouterr().out


def test_parser_raises_usage_error():
    with pytest.raises(UsageError):
        build_parser().parse_args(["train", "--seed", "abc"])


def test_bad_config(tmp_path, capsys):
    assert main(["gen-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text('{"train": {"epochs": -1}}', encoding="utf-8")
    assert main(["gen-data", "--config", str(broken), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "Usage error" in capsys.readouterr().err


def test_missing_stage_is_runtime_error(tmp_path, config_file, capsys):
    assert main(["train", "--config", str(config_file), "--out", str(tmp_path / "out")]) == EXIT_RUNTIME
    assert "MissingModel" in capsys.readouterr().err


def test_gen_data(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert main(["gen-data", "--config", str(config_file), "--seed", "3", "--out", str(out)]) == EXIT_OK
    assert (out / "data" / "regime_0" / "meta.json").is_file()
    assert (out / "twin.json").is_file()
    assert json.loads((out / "config.json").read_text(encoding="utf-8"))["seed"] == 3
    assert capsys.readouterr().out.startswith("✅")


def test_report_on_empty_directory(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "report.md").is_file()


@pytest.mark.slow
def test_gen_data_is_deterministic(tmp_path, config_file):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(["gen-data", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    files = sorted(p.relative_to(first) for p in (first / "data").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes()
