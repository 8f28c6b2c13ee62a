"""Tests for closed-loop episodes, ablations, the MI benchmark and result files."""
# pylint: disable=missing-function-docstring

import json
import math

import numpy as np
import pytest

from sat_planner.config import ScenarioConfig, TargetScript, load_scenario
from sat_planner.environment import CellState, OccupancyGrid
from sat_planner.errors import InputDomainError, ScenarioError
from sat_planner.harness import (
    BENCH_BASE_NOISE,
    BENCH_COLUMNS,
    METRICS_COLUMNS,
    EpisodeMetrics,
    TargetWalker,
    bench_particles,
    load_truth_map,
    run_ablation,
    run_episode,
    run_mi_bench,
    run_scenario,
    search_time_difference,
    tracking_metrics,
    write_bench,
    write_episode,
    write_table,
)

# ===================================================================
# Metrics helpers
# ===================================================================


def test_tracking_metrics_after_first_detection():
    found, r_los, eps, tracked, lost = tracking_metrics(
        [False, False, True, True, False, True], [9.0, 9.0, 1.0, 2.0, 3.0, 4.0]
    )
    assert found == 2.0
    assert r_los == pytest.approx(0.25)
    assert eps == pytest.approx(2.5)
    assert (tracked, lost) == (4, 1)


def test_tracking_metrics_never_found():
    assert tracking_metrics([False] * 3, [1.0] * 3) == (math.inf, None, None, 0, 0)


def test_search_time_difference():
    assert search_time_difference(12.0, 10.0) == 2.0
    assert search_time_difference(math.inf, 10.0) is None
    assert search_time_difference(5.0, math.inf) is None


def test_unfound_episode_row():
    row = EpisodeMetrics("s", "Full", 0, 10, math.inf).as_row()
    assert row["steps_to_find"] == "inf"
    assert row["r_los"] is None
    assert list(row) == list(METRICS_COLUMNS)


# ===================================================================
# Ground-truth target
# ===================================================================


def test_walker_follows_waypoints_cyclically():
    truth = OccupancyGrid.filled(20, 20, 0.5)
    walker = TargetWalker(TargetScript(start=(2.0, 2.0), waypoints=[(4.0, 2.0), (4.0, 4.0)], speed=2.0), truth, 0.5)
    rng = np.random.default_rng(0)
    positions = []
    for _ in range(5):
        walker.step(rng)
        positions.append(tuple(walker.position))
    expected = [(3.0, 2.0), (4.0, 2.0), (4.0, 3.0), (4.0, 4.0), (4.0, 3.0)]
    np.testing.assert_allclose(positions, expected)


def test_walker_without_waypoints_stays_put():
    walker = TargetWalker(TargetScript(start=(2.0, 2.0)), OccupancyGrid.filled(20, 20, 0.5), 0.5)
    walker.step(np.random.default_rng(0))
    assert walker.state.x == 2.0 and walker.state.y == 2.0


def test_walker_jitter_never_enters_walls():
    cells = np.full((20, 20), int(CellState.OCCUPIED), dtype=np.int8)
    cells[2:7, 2:7] = CellState.FREE
    truth = OccupancyGrid(cells, 0.5)
    walker = TargetWalker(TargetScript(start=(2.25, 2.25), jitter=1.0), truth, 0.5)
    rng = np.random.default_rng(4)
    for _ in range(50):
        walker.step(rng)
        i, j = truth.cell_of(*walker.position)
        assert truth.state(i, j) == CellState.FREE


def test_walker_start_outside_map():
    with pytest.raises(ScenarioError):
        TargetWalker(TargetScript(start=(50.0, 2.0)), OccupancyGrid.filled(20, 20, 0.5), 0.5)


# ===================================================================
# Episodes
# ===================================================================


def test_episode_finds_target_in_view(tiny_scenario):
    result = run_episode(load_scenario(tiny_scenario), scenario_name="tiny")
    m = result.metrics
    assert m.steps_to_find == 0.0
    assert m.variant == "Full"
    assert m.scenario == "tiny"
    assert m.plan_cycles == 4
    assert m.tracking_steps == 4
    assert len(result.trajectory) == 4
    first = result.trajectory[0]
    assert first.stage == "tracking"
    assert first.horizon == 2
    assert first.as_row()["measurement"] == "detection"


def test_episode_is_deterministic(tiny_scenario):
    cfg = load_scenario(tiny_scenario)
    first = run_episode(cfg, seed=11, variant="Van+R")
    second = run_episode(cfg, seed=11, variant="Van+R")
    assert first.metrics.as_row() == second.metrics.as_row()
    assert [r.as_row() for r in first.trajectory] == [r.as_row() for r in second.trajectory]


def test_greedy_episode_label(tiny_scenario):
    result = run_episode(load_scenario(tiny_scenario), planner_kind="greedy")
    assert result.metrics.variant == "greedy"
    assert result.metrics.rollouts == 0


def test_episode_rejects_unknown_variant(tiny_scenario):
    cfg = load_scenario(tiny_scenario)
    with pytest.raises(InputDomainError):
        run_episode(cfg, variant="Turbo")
    with pytest.raises(InputDomainError):
        run_episode(cfg, planner_kind="oracle")


def test_scenario_against_greedy_reference(tiny_scenario):
    result = run_scenario(load_scenario(tiny_scenario), reference="greedy")
    assert result.metrics.t_s == 0.0
    assert result.metrics.as_row()["t_s"] == "0"


def test_missing_map_file(tmp_path):
    cfg = ScenarioConfig(
        map=str(tmp_path / "absent.map"),
        robot_start=(1.0, 1.0, 0.0),
        target={"start": (2.0, 2.0)},
        initial_belief=[{"mean": (2.0, 2.0), "weight": 1.0}],
    )
    with pytest.raises(ScenarioError):
        load_truth_map(cfg)


# ===================================================================
# Ablation
# ===================================================================


def test_ablation_runs_every_variant_on_shared_seeds(tiny_scenario):
    result = run_ablation(load_scenario(tiny_scenario), ["Van", "Full"], trials=2, seed=5)
    assert [(m.variant, m.seed) for m in result.episodes] == [
        ("Van", 5), ("Van", 6), ("Full", 5), ("Full", 6),
    ]
    assert [row["variant"] for row in result.summary] == ["Van", "Full"]
    assert all(row["trials"] == 2 for row in result.summary)
    assert result.episodes[0].reuses == 0


def test_ablation_result_independent_of_workers(tiny_scenario):
    cfg = load_scenario(tiny_scenario)
    serial = run_ablation(cfg, ["Van+H", "Full"], trials=2, seed=1, workers=1)
    parallel = run_ablation(cfg, ["Van+H", "Full"], trials=2, seed=1, workers=3)
    assert [m.as_row() for m in serial.episodes] == [m.as_row() for m in parallel.episodes]
    assert serial.summary == parallel.summary


def test_ablation_rejects_bad_arguments(tiny_scenario):
    cfg = load_scenario(tiny_scenario)
    with pytest.raises(InputDomainError):
        run_ablation(cfg, ["Van", "Nope"])
    with pytest.raises(InputDomainError):
        run_ablation(cfg, ["Van"], trials=0)


# ===================================================================
# MI benchmark
# ===================================================================


def test_bench_particles_beta_scales_noise(rng):
    belief, sigma = bench_particles("beta", 2.0, 50, rng)
    assert belief.n == 50
    np.testing.assert_allclose(sigma, 2.0 * np.array(BENCH_BASE_NOISE))


def test_bench_rejects_bad_sweep(rng):
    with pytest.raises(InputDomainError):
        bench_particles("gamma", 1.0, 10, rng)
    with pytest.raises(InputDomainError):
        bench_particles("alpha", 0.0, 10, rng)


def test_bench_rows_per_estimator():
    rows = run_mi_bench("alpha", [0.5, 1.0], ["SP", "MC"], n_particles=30, mc_samples=2000)
    assert [(r.estimator, r.value) for r in rows] == [
        ("SP", 0.5), ("MC", 0.5), ("SP", 1.0), ("MC", 1.0),
    ]
    for row in rows:
        assert math.isfinite(row.entropy)
        assert row.wall_ns >= 0
    assert rows[1].abs_error == 0.0
    assert rows[1].mc_stderr > 0
    assert rows[0].mc_stderr is None


def test_bench_without_estimators_writes_header_only(tmp_path):
    rows = run_mi_bench("beta", [1.0], [], n_particles=10, mc_samples=100)
    assert rows == []
    path = write_bench(rows, tmp_path)
    assert path.read_text(encoding="utf-8") == ",".join(BENCH_COLUMNS) + "\n"


def test_bench_rejects_bad_arguments():
    with pytest.raises(InputDomainError):
        run_mi_bench("alpha", [])
    with pytest.raises(InputDomainError):
        run_mi_bench("alpha", [1.0], ["SP", "KDE"])


# ===================================================================
# Result files
# ===================================================================


def test_write_table_csv_blanks_none(tmp_path):
    path = write_table(tmp_path / "t.csv", [{"a": 1, "b": None}], ("a", "b"))
    assert path.read_text(encoding="utf-8") == "a,b\n1,\n"


def test_write_table_json_keeps_null(tmp_path):
    path = write_table(tmp_path / "t.json", [{"a": 1, "b": None, "c": 3}], ("a", "b"), "json")
    assert json.loads(path.read_text(encoding="utf-8")) == [{"a": 1, "b": None}]


def test_write_table_unknown_format(tmp_path):
    with pytest.raises(InputDomainError):
        write_table(tmp_path / "t.xml", [], ("a",), "xml")


def test_write_episode_files(tiny_scenario, tmp_path):
    result = run_episode(load_scenario(tiny_scenario))
    paths = write_episode(result, tmp_path / "out")
    assert [p.name for p in paths] == ["metrics.csv", "trajectory.csv", "timings.csv"]
    header = paths[0].read_text(encoding="utf-8").splitlines()[0]
    assert header.split(",") == list(METRICS_COLUMNS)
    assert len(paths[1].read_text(encoding="utf-8").splitlines()) == 1 + 4
