"""MCP server tests: tool registration, results and error strings."""
# pylint: disable=missing-function-docstring,protected-access

import json
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from sat_planner.config import PlannerConfig
from sat_planner.errors import PlannerStuckError, ScenarioError
from sat_planner.server import _format_mcp_error, _handle_mcp_errors, main


async def _call(client, tool, args):
    return (await client.call_tool(tool, args)).content[0].text


# ===================================================================
# Registration
# ===================================================================


async def test_tools_registered(mcp_client):
    tools = {t.name for t in await mcp_client.list_tools()}
    assert {
        "list_scenarios",
        "validate_scenario",
        "run_scenario",
        "run_ablation",
        "bench_mi",
        "describe_defaults",
    } <= tools


async def test_list_scenarios(mcp_client):
    names = json.loads(await _call(mcp_client, "list_scenarios", {}))
    assert {"structured_corner", "unstructured_search", "tracking_open"} <= set(names)


async def test_describe_defaults(mcp_client):
    defaults = json.loads(await _call(mcp_client, "describe_defaults", {}))
    assert defaults["planner"]["n_max"] == 100
    assert defaults["hierarchy"] == {"l_c": 10.0, "l_f": 1.0}
    assert set(defaults["variants"]) == {"Van", "Van+R", "Van+H", "Full"}


# ===================================================================
# Tools
# ===================================================================


async def test_validate_scenario_file(mcp_client, tiny_scenario):
    payload = json.loads(await _call(mcp_client, "validate_scenario", {"scenario": str(tiny_scenario)}))
    assert payload["valid"] is True
    assert payload["map_cells"] == [40, 40]
    assert payload["n_particles"] == 40


async def test_validate_shipped_scenario(mcp_client):
    payload = json.loads(await _call(mcp_client, "validate_scenario", {"scenario": "tracking_open"}))
    assert payload["valid"] is True
    assert payload["map_cells"] == [100, 100]


async def test_validate_unknown_scenario(mcp_client):
    text = await _call(mcp_client, "validate_scenario", {"scenario": "no_such_place"})
    assert text.startswith("Error validating scenario: scenario problem:")


async def test_run_scenario_tool(mcp_client, tiny_scenario):
    payload = json.loads(
        await _call(
            mcp_client,
            "run_scenario",
            {"scenario": str(tiny_scenario), "include_trajectory": True},
        )
    )
    assert payload["metrics"]["steps_to_find"] == "0"
    assert payload["timings"]["plan_cycles"] == 4
    assert len(payload["trajectory"]) == 4


async def test_run_ablation_tool(mcp_client, tiny_scenario):
    payload = json.loads(
        await _call(
            mcp_client,
            "run_ablation",
            {"scenario": str(tiny_scenario), "variants": ["Van", "Full"], "trials": 1},
        )
    )
    assert [e["variant"] for e in payload["episodes"]] == ["Van", "Full"]
    assert len(payload["summary"]) == 2


async def test_run_ablation_bad_variant(mcp_client, tiny_scenario):
    text = await _call(
        mcp_client, "run_ablation", {"scenario": str(tiny_scenario), "variants": ["Fast"]}
    )
    assert text == "Error running ablation: unknown variants: Fast"


async def test_bench_mi_tool(mcp_client):
    rows = json.loads(
        await _call(
            mcp_client,
            "bench_mi",
            {"sweep": "alpha", "values": [1.0], "estimators": ["SP-s"], "n_particles": 20, "mc_samples": 500},
        )
    )
    assert len(rows) == 1
    assert rows[0]["estimator"] == "SP-s"


async def test_bench_mi_bad_sweep(mcp_client):
    text = await _call(mcp_client, "bench_mi", {"sweep": "delta", "values": [1.0]})
    assert text.startswith("Error benchmarking MI estimators:")


# ===================================================================
# Error formatting
# ===================================================================


def test_format_validation_error():
    try:
        PlannerConfig(n_max=0)
    except ValidationError as exc:
        text = _format_mcp_error("checking", exc)
    assert text.startswith("Error checking: invalid configuration: n_max:")


def test_format_known_errors():
    assert _format_mcp_error("x", ScenarioError("bad")) == "Error x: scenario problem: bad"
    assert _format_mcp_error("x", PlannerStuckError("boxed in")) == "Error x: planner stuck: boxed in"
    assert _format_mcp_error("x", KeyError("k")) == "Error x: 'k'"


def test_handler_wraps_sync_tool():
    @_handle_mcp_errors("doing sync")
    def tool():
        raise ScenarioError("gone")

    assert tool() == "Error doing sync: scenario problem: gone"


async def test_handler_wraps_async_tool():
    @_handle_mcp_errors("doing async")
    async def tool():
        raise RuntimeError("late")

    assert await tool() == "Error doing async: late"


def test_main_reraises():
    with patch("sat_planner.server.mcp.run", side_effect=RuntimeError("port busy")):
        with pytest.raises(RuntimeError, match="port busy"):
            main()
