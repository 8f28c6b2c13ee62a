"""Command-line entry point: ``sat-planner {run,ablate,bench-mi,validate}``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error. Failures are reported on stderr as a one-line JSON
object ``{"error": ..., "type": ..., "exit_code": ...}``.

Defaults for the common flags can be set in the environment (or a
``.env`` file): ``SAT_PLANNER_OUT``, ``SAT_PLANNER_FORMAT``,
``SAT_PLANNER_LOG_LEVEL`` and ``SAT_PLANNER_WORKERS``.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, List, NoReturn, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from sat_planner.config import load_scenario
from sat_planner.errors import InputDomainError, ScenarioError
from sat_planner.harness import (
    ESTIMATORS,
    VARIANTS,
    load_truth_map,
    run_ablation,
    run_mi_bench,
    run_scenario,
    write_ablation,
    write_bench,
    write_episode,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad command line; maps to exit code 2."""


class _JsonErrorParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as JSON instead of exiting with text."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _JsonErrorParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    common.add_argument(
        "--out",
        type=Path,
        default=Path(os.getenv("SAT_PLANNER_OUT", "results")),
        help="Output directory (default: $SAT_PLANNER_OUT or ./results).",
    )
    common.add_argument(
        "--format",
        choices=("csv", "json"),
        default=os.getenv("SAT_PLANNER_FORMAT", "csv"),
        help="Metrics file format.",
    )
    common.add_argument(
        "--log-level",
        default=os.getenv("SAT_PLANNER_LOG_LEVEL", "WARNING"),
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
    )

    parser = _JsonErrorParser(
        prog="sat-planner",
        description="Search-and-tracking planner: closed-loop episodes, ablations and MI benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    run = sub.add_parser("run", parents=[common], help="Run one closed-loop episode.")
    run.add_argument("scenario", type=Path)
    run.add_argument(
        "--reference",
        choices=("greedy", "none"),
        default="greedy",
        help="Baseline run used for the search-time difference t_s.",
    )

    ablate = sub.add_parser("ablate", parents=[common], help="Compare ablation variants.")
    ablate.add_argument("scenario", type=Path)
    ablate.add_argument(
        "--variants",
        type=_csv_list,
        default=list(VARIANTS),
        help=f"Comma-separated subset of {', '.join(VARIANTS)}.",
    )
    ablate.add_argument("--trials", type=int, default=1)
    ablate.add_argument(
        "--workers", type=int, default=int(os.getenv("SAT_PLANNER_WORKERS", "1"))
    )
    ablate.add_argument("--reference", choices=("greedy", "none"), default="none")

    bench = sub.add_parser("bench-mi", parents=[common], help="Benchmark MI entropy estimators.")
    bench.add_argument("--sweep", choices=("alpha", "beta"), required=True)
    bench.add_argument("--values", type=_float_list, default=[0.25, 0.5, 1.0, 2.0, 4.0])
    bench.add_argument(
        "--estimators",
        type=_csv_list,
        default=list(ESTIMATORS),
        help=f"Comma-separated subset of {', '.join(ESTIMATORS)}; empty for none.",
    )
    bench.add_argument("--n-particles", type=int, default=500)
    bench.add_argument("--mc-samples", type=int, default=1_000_000)
    bench.add_argument("--simplify-cell", type=float, default=0.2)

    validate = sub.add_parser("validate", parents=[common], help="Check a scenario and its map.")
    validate.add_argument("scenario", type=Path)
    return parser


# ── Subcommands ────────────────────────────────────────────────────────


def _cmd_run(args: argparse.Namespace) -> None:
    cfg = load_scenario(args.scenario)
    result = run_scenario(
        cfg, seed=args.seed, reference=args.reference, scenario_name=args.scenario.stem
    )
    for path in write_episode(result, args.out, args.format):
        logger.info("Wrote %s", path)


def _cmd_ablate(args: argparse.Namespace) -> None:
    cfg = load_scenario(args.scenario)
    result = run_ablation(
        cfg,
        args.variants,
        args.trials,
        seed=args.seed,
        workers=args.workers,
        reference=args.reference,
        scenario_name=args.scenario.stem,
    )
    for path in write_ablation(result, args.out, args.format):
        logger.info("Wrote %s", path)


def _cmd_bench(args: argparse.Namespace) -> None:
    rows = run_mi_bench(
        args.sweep,
        args.values,
        args.estimators,
        n_particles=args.n_particles,
        seed=0 if args.seed is None else args.seed,
        mc_samples=args.mc_samples,
        simplify_cell=args.simplify_cell,
    )
    logger.info("Wrote %s", write_bench(rows, args.out, args.format))


def _cmd_validate(args: argparse.Namespace) -> None:
    cfg = load_scenario(args.scenario)
    grid = load_truth_map(cfg)
    logger.info(
        "%s: %dx%d map, %d particles, %d steps",
        args.scenario, grid.width, grid.height, cfg.n_particles, cfg.episode_steps,
    )


_COMMANDS = {
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "bench-mi": _cmd_bench,
    "validate": _cmd_validate,
}


def _report(exc: BaseException, code: int) -> int:
    message = str(exc)
    if isinstance(exc, ValidationError):
        message = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
    print(
        json.dumps({"error": message, "type": type(exc).__name__, "exit_code": code}),
        file=sys.stderr,
    )
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run a subcommand; returns the process exit code."""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _report(exc, EXIT_USAGE)

    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        _COMMANDS[args.command](args)
    except (UsageError, ScenarioError, InputDomainError, ValidationError) as exc:
        return _report(exc, EXIT_USAGE)
    except Exception as exc:  # pylint: disable=broad-exception-caught
        logger.error("Command %s failed: %s (%s)", args.command, exc, type(exc).__name__)
        return _report(exc, EXIT_FAILURE)
    return EXIT_OK


__all__: Iterable[str] = ("EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE", "build_parser", "main")
