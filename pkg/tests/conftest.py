"""Shared fixtures: the full benchmark grid is expensive, so it runs once
per session and every test that needs it reads the same report."""

import os
import time

import pytest

from qmave import NoiseLaw, run_benchmark

TABLE_SEED = 20260809
TABLE_N = 200
TABLE_REPS = 100
ALL_LAWS = (
    NoiseLaw.SCALED_T1,
    NoiseLaw.CENTERED_QUARTIC_NORMAL,
    NoiseLaw.SCALED_T5,
    NoiseLaw.SCALED_NORMAL,
)


@pytest.fixture(scope="session")
def table1_report():
    """Benchmark report for all four noise laws and both methods at
    n=200 with 100 replications, plus the wall-clock time it took."""
    workers = min(os.cpu_count() or 1, 4)
    t0 = time.time()
    report = run_benchmark(
        ns=[TABLE_N],
        laws=list(ALL_LAWS),
        replications=TABLE_REPS,
        base_seed=TABLE_SEED,
        workers=workers,
    )
    return report, time.time() - t0
