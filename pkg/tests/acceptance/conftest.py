"""Fixtures for the desk-scale acceptance suite.

These runs use full-size inputs (500 particles, 10^6 Monte-Carlo samples,
200-step episodes) and take minutes to hours. They are deselected by the
default ``addopts = -m 'not slow'``; run them with

    pytest tests/acceptance -m slow

``SAT_PLANNER_WORKERS`` sets the number of episodes run in parallel by
the closed-loop checks.
"""
# pylint: disable=missing-function-docstring

import os
import time
from dataclasses import dataclass
from typing import List

import pytest

from sat_planner.harness import BenchRow, run_mi_bench

SWEEP_VALUES = (0.25, 0.5, 1.0, 2.0, 4.0)
BENCH_SEED = 0


@dataclass(frozen=True)
class SweepRun:
    """Rows of one ``run_mi_bench`` sweep and its wall time in seconds."""

    rows: List[BenchRow]
    seconds: float


def _sweep(name: str) -> SweepRun:
    started = time.perf_counter()
    rows = run_mi_bench(name, SWEEP_VALUES, ("SP", "SP-s", "SP-st", "MC"), seed=BENCH_SEED)
    return SweepRun(rows, time.perf_counter() - started)


@pytest.fixture(scope="session")
def workers():
    return int(os.getenv("SAT_PLANNER_WORKERS", str(os.cpu_count() or 1)))


@pytest.fixture(scope="session")
def alpha_sweep():
    return _sweep("alpha")


@pytest.fixture(scope="session")
def beta_sweep():
    return _sweep("beta")


@pytest.fixture(scope="session")
def alpha_bench(alpha_sweep):
    return alpha_sweep.rows


@pytest.fixture(scope="session")
def beta_bench(beta_sweep):
    return beta_sweep.rows
