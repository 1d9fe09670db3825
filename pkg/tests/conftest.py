"""Session fixtures: the synthetic benchmark dataset and cached pipeline runs."""

from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenario_helpers import benchmark_config, benchmark_scenario  # noqa: E402

from mobidisc.pipeline import run_pipeline  # noqa: E402
from mobidisc.synthetic import generate_scene  # noqa: E402


@pytest.fixture(scope="session")
def bench_dataset(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("bench_data")
    generate_scene(benchmark_scenario(), root, seed=0)
    return root


@pytest.fixture(scope="session")
def bench_runs(bench_dataset, tmp_path_factory):
    """Pipeline outputs per stage, plus the wall time of the full stage."""
    out_root = tmp_path_factory.mktemp("bench_runs")
    runs = {}
    timings = {}
    for stage in ("spatial", "+motion", "+appearance"):
        t0 = time.monotonic()
        runs[stage] = run_pipeline(
            benchmark_config(), bench_dataset, out_root / stage.replace("+", "plus_"), stage=stage
        )
        timings[stage] = time.monotonic() - t0
    return {"runs": runs, "timings": timings, "dataset": bench_dataset}
