"""Command-line tests: exit codes, JSON error reports and output files."""
# pylint: disable=missing-function-docstring

import json
from unittest.mock import patch

from sat_planner.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, main
from sat_planner.harness import BENCH_COLUMNS


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ===================================================================
# validate
# ===================================================================


def test_validate_writes_nothing(tiny_scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["validate", str(tiny_scenario), "--out", str(out)]) == EXIT_OK
    assert not out.exists()


def test_missing_scenario_is_usage_error(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_USAGE
    report = _error(capsys)
    assert report["type"] == "ScenarioError"
    assert report["exit_code"] == EXIT_USAGE


def test_invalid_field_is_usage_error(tiny_scenario, capsys):
    raw = json.loads(tiny_scenario.read_text(encoding="utf-8"))
    raw["n_particles"] = 0
    tiny_scenario.write_text(json.dumps(raw), encoding="utf-8")
    assert main(["validate", str(tiny_scenario)]) == EXIT_USAGE
    report = _error(capsys)
    assert report["type"] == "ValidationError"
    assert "n_particles" in report["error"]


# ===================================================================
# Argument errors
# ===================================================================


def test_unknown_flag(tiny_scenario, capsys):
    assert main(["run", str(tiny_scenario), "--bogus"]) == EXIT_USAGE
    report = _error(capsys)
    assert report["type"] == "UsageError"
    assert "--bogus" in report["error"]


def test_missing_subcommand(capsys):
    assert main([]) == EXIT_USAGE
    assert _error(capsys)["exit_code"] == EXIT_USAGE


def test_bench_requires_sweep(capsys):
    assert main(["bench-mi"]) == EXIT_USAGE
    assert "--sweep" in _error(capsys)["error"]


def test_unknown_variant_is_usage_error(tiny_scenario, tmp_path, capsys):
    code = main(["ablate", str(tiny_scenario), "--variants", "Van,Warp", "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "Warp" in _error(capsys)["error"]


def test_runtime_failure_exit_code(tiny_scenario, tmp_path, capsys):
    with patch("sat_planner.cli.run_scenario", side_effect=RuntimeError("boom")):
        code = main(["run", str(tiny_scenario), "--out", str(tmp_path)])
    assert code == EXIT_FAILURE
    report = _error(capsys)
    assert report == {"error": "boom", "type": "RuntimeError", "exit_code": EXIT_FAILURE}


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("SAT_PLANNER_OUT", "/tmp/sat-results")
    monkeypatch.setenv("SAT_PLANNER_FORMAT", "json")
    monkeypatch.setenv("SAT_PLANNER_WORKERS", "3")
    args = build_parser().parse_args(["ablate", "scenario.json"])
    assert str(args.out) == "/tmp/sat-results"
    assert args.format == "json"
    assert args.workers == 3


# ===================================================================
# Output files
# ===================================================================


def test_run_is_byte_reproducible(tiny_scenario, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(tiny_scenario), "--seed", "4", "--out", str(first)]) == EXIT_OK
    assert main(["run", str(tiny_scenario), "--seed", "4", "--out", str(second)]) == EXIT_OK
    for name in ("metrics.csv", "trajectory.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert (first / "timings.csv").exists()


def test_run_json_metrics(tiny_scenario, tmp_path):
    code = main(["run", str(tiny_scenario), "--format", "json", "--reference", "none", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
    assert rows[0]["steps_to_find"] == "0"
    assert rows[0]["t_s"] is None


def test_ablate_writes_summary(tiny_scenario, tmp_path):
    code = main(["ablate", str(tiny_scenario), "--variants", "Van,Full", "--trials", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    episodes = (tmp_path / "episodes.csv").read_text(encoding="utf-8").splitlines()
    summary = (tmp_path / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert len(episodes) == 1 + 4
    assert len(summary) == 1 + 2
    assert (tmp_path / "ablation_timings.csv").exists()


def test_bench_without_estimators(tmp_path):
    code = main(["bench-mi", "--sweep", "alpha", "--values", "1", "--estimators=", "--out", str(tmp_path)])
    assert code == EXIT_OK
    text = (tmp_path / "mi_bench.csv").read_text(encoding="utf-8")
    assert text == ",".join(BENCH_COLUMNS) + "\n"
