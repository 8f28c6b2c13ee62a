"""MCP server exposing the planner harness as tools.

Every tool returns a JSON string. Failures never raise into the MCP
transport; they come back as ``"Error <operation>: <message>"``.
"""

import asyncio
import functools
import inspect
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from dotenv import load_dotenv
from fastmcp import FastMCP
from pydantic import ValidationError

from sat_planner.config import (
    FilterConfig,
    HierarchyConfig,
    MiConfig,
    NoiseConfig,
    PlannerConfig,
    SensorConfig,
    data_path,
    load_scenario,
)
from sat_planner.errors import (
    InputDomainError,
    NumericDomainError,
    PlannerStuckError,
    ScenarioError,
)
from sat_planner.harness import (
    ESTIMATORS,
    VARIANTS,
    load_truth_map,
    run_ablation as _run_ablation,
    run_mi_bench,
    run_scenario as _run_scenario,
    timing_summary,
)

logger = logging.getLogger(__name__)

load_dotenv()

mcp = FastMCP("sat-planner")


# ── MCP tool error handling ────────────────────────────────────────────


def _format_mcp_error(operation: str, exc: Exception) -> str:
    """Format an exception as a user-readable MCP tool error string."""
    if isinstance(exc, ValidationError):
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        logger.error("Invalid configuration %s: %s", operation, problems)
        return f"Error {operation}: invalid configuration: {problems}"
    if isinstance(exc, ScenarioError):
        logger.error("Scenario error %s: %s", operation, exc)
        return f"Error {operation}: scenario problem: {exc}"
    if isinstance(exc, (InputDomainError, NumericDomainError)):
        logger.error("Bad input %s: %s", operation, exc)
        return f"Error {operation}: {exc}"
    if isinstance(exc, PlannerStuckError):
        logger.error("Planner stuck %s: %s", operation, exc)
        return f"Error {operation}: planner stuck: {exc}"
    logger.error(
        "Unexpected error %s: %s (%s)",
        operation, exc, type(exc).__name__,
    )
    return f"Error {operation}: {exc}"


def _handle_mcp_errors(operation: str) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Decorator turning any exception of a tool into an error string.

    Works for both sync and async tools.
    """

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        if inspect.iscoroutinefunction(func):

            @functools.wraps(func)
            async def async_wrapper(*args: Any, **kwargs: Any) -> Any:
                try:
                    return await func(*args, **kwargs)
                except Exception as exc:  # pylint: disable=broad-exception-caught
                    return _format_mcp_error(operation, exc)

            return async_wrapper

        @functools.wraps(func)
        def sync_wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except Exception as exc:  # pylint: disable=broad-exception-caught
                return _format_mcp_error(operation, exc)

        return sync_wrapper

    return decorator


# ── Helpers ────────────────────────────────────────────────────────────


def _resolve_scenario(scenario: str) -> Path:
    """A scenario file path, or the name of a scenario shipped with the package."""
    path = Path(scenario)
    if path.suffix == ".json" or path.exists():
        return path
    shipped = data_path("scenarios", f"{scenario}.json")
    if shipped.is_file():
        return shipped
    raise ScenarioError(f"no scenario file or shipped scenario named {scenario!r}")


def _dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, default=str)


# ── Tools ──────────────────────────────────────────────────────────────


@mcp.tool()
@_handle_mcp_errors("listing scenarios")
def list_scenarios() -> str:
    """List the scenarios shipped with the package."""
    folder = data_path("scenarios")
    return _dumps(sorted(p.stem for p in folder.glob("*.json")))


@mcp.tool()
@_handle_mcp_errors("validating scenario")
def validate_scenario(scenario: str) -> str:
    """Validate a scenario file (or shipped scenario name) and its map.

    Args:
        scenario: Path to a scenario JSON file, or a shipped scenario name.
    """
    path = _resolve_scenario(scenario)
    cfg = load_scenario(path)
    grid = load_truth_map(cfg)
    return _dumps(
        {
            "valid": True,
            "scenario": str(path),
            "map": cfg.map_path,
            "map_cells": [grid.width, grid.height],
            "resolution": grid.resolution,
            "n_particles": cfg.n_particles,
            "episode_steps": cfg.episode_steps,
        }
    )


@mcp.tool()
@_handle_mcp_errors("running scenario")
async def run_scenario(
    scenario: str,
    seed: Optional[int] = None,
    reference: str = "none",
    include_trajectory: bool = False,
) -> str:
    """Run one closed-loop search and tracking episode.

    Args:
        scenario: Path to a scenario JSON file, or a shipped scenario name.
        seed: Overrides the scenario seed.
        reference: "greedy" to also compute the search-time difference t_s.
        include_trajectory: Return the per-step log as well.
    """
    path = _resolve_scenario(scenario)
    cfg = load_scenario(path)
    result = await asyncio.to_thread(
        _run_scenario, cfg, seed=seed, reference=reference, scenario_name=path.stem
    )
    payload: Dict[str, Any] = {
        "metrics": result.metrics.as_row(),
        "timings": timing_summary(result.metrics),
    }
    if include_trajectory:
        payload["trajectory"] = [r.as_row() for r in result.trajectory]
    return _dumps(payload)


@mcp.tool()
@_handle_mcp_errors("running ablation")
async def run_ablation(
    scenario: str,
    variants: Optional[List[str]] = None,
    trials: int = 1,
    seed: Optional[int] = None,
    workers: int = 1,
) -> str:
    """Compare the hierarchy/recycling ablation variants on shared seeds.

    Args:
        scenario: Path to a scenario JSON file, or a shipped scenario name.
        variants: Subset of Van, Van+R, Van+H, Full (default: all four).
        trials: Seeds per variant.
        seed: First seed; trial t uses seed + t.
        workers: Episodes run in parallel.
    """
    path = _resolve_scenario(scenario)
    cfg = load_scenario(path)
    result = await asyncio.to_thread(
        _run_ablation,
        cfg,
        variants or list(VARIANTS),
        trials,
        seed=seed,
        workers=workers,
        scenario_name=path.stem,
    )
    return _dumps(
        {
            "episodes": [m.as_row() for m in result.episodes],
            "summary": result.summary,
            "timings": result.timings,
        }
    )


@mcp.tool()
@_handle_mcp_errors("benchmarking MI estimators")
async def bench_mi(
    sweep: str,
    values: List[float],
    estimators: Optional[List[str]] = None,
    n_particles: int = 500,
    mc_samples: int = 100_000,
    seed: int = 0,
) -> str:
    """Entropy estimates of SP, SP-s, SP-st and MC over a dispersion or noise sweep.

    Args:
        sweep: "alpha" (particle dispersion) or "beta" (noise scale).
        values: Sweep points, all positive.
        estimators: Subset of SP, SP-s, SP-st, MC (default: all).
        n_particles: Particles per sweep point.
        mc_samples: Samples of the Monte-Carlo reference.
        seed: Random seed.
    """
    rows = await asyncio.to_thread(
        run_mi_bench,
        sweep,
        values,
        ESTIMATORS if estimators is None else estimators,
        n_particles=n_particles,
        seed=seed,
        mc_samples=mc_samples,
    )
    return _dumps([r.as_row() for r in rows])


@mcp.tool()
@_handle_mcp_errors("describing defaults")
def describe_defaults() -> str:
    """Default planner, filter, hierarchy, MI, noise and sensor settings."""
    return _dumps(
        {
            "planner": PlannerConfig().model_dump(),
            "filter": FilterConfig().model_dump(),
            "hierarchy": HierarchyConfig().model_dump(),
            "mi": MiConfig().model_dump(),
            "noise": NoiseConfig().model_dump(),
            "camera": SensorConfig().model_dump(mode="json"),
            "variants": {k: v.model_dump() for k, v in VARIANTS.items()},
        }
    )


def main() -> None:
    """Main entry point for the MCP server."""
    logging.basicConfig(level=logging.INFO)
    logger.info("Starting sat-planner MCP server...")
    try:
        mcp.run()
    except Exception as e:  # pylint: disable=broad-exception-caught
        logger.error("Failed to run server: %s", e)
        raise


# Export for mcp run
app = mcp

if __name__ == "__main__":
    main()
