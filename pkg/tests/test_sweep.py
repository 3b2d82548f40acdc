import json
import os

import pandas as pd
import pytest

from src import step2_sweep
from src.config import RootConfig
from src.step1_simulation import build_controller_context
from src.step2_sweep import MANIFEST_FILE, run_sweep, speed_grid
from tests.conftest import short_config

TIMING_COLUMNS = ["solve_time_max_ms", "solve_time_mean_ms"]


def _sweep_config():
    config = short_config(N=4, steps=3)
    data = config.model_dump()
    data["sweep"].update({"v1_kmh": [46.0, 46.0], "v2_kmh": [35.0, 36.0], "modes": ["gpmpc_only"]})
    return type(config).model_validate(data)


@pytest.fixture(scope="module")
def sweep_context():
    return build_controller_context(_sweep_config(), with_terminal_sets=False)


def test_speed_grid_is_row_major_and_inclusive():
    config = short_config()
    data = config.model_dump()
    data["sweep"].update({"v1_kmh": [40.0, 42.0], "v2_kmh": [30.0, 31.0]})
    grid = speed_grid(type(config).model_validate(data).sweep)
    assert grid == [(40.0, 30.0), (40.0, 31.0), (41.0, 30.0), (41.0, 31.0), (42.0, 30.0), (42.0, 31.0)]


def test_report_does_not_depend_on_workers(sweep_context):
    config = _sweep_config()
    serial, serial_logs = run_sweep(config, jobs=1, context=sweep_context)
    parallel, parallel_logs = run_sweep(config, jobs=2, context=sweep_context)

    assert [log.name for log in serial_logs] == [log.name for log in parallel_logs]
    assert [log.name for log in serial_logs] == ["gpmpc_only_v1_46_v2_35", "gpmpc_only_v1_46_v2_36"]
    pd.testing.assert_frame_equal(serial.scenarios.drop(columns=TIMING_COLUMNS),
                                  parallel.scenarios.drop(columns=TIMING_COLUMNS))
    assert serial.summary["gpmpc_only"]["total"] == 2
    assert serial.summary["gpmpc_only"]["overall"] == parallel.summary["gpmpc_only"]["overall"]
    summary = serial.summary["gpmpc_only"]
    assert summary["overall"]["scenarios"] == summary["total"] - summary["excluded"]


def test_sweep_resumes_from_manifest(sweep_context, tmp_path, monkeypatch):
    config = _sweep_config()
    first, _ = run_sweep(config, jobs=1, output_dir=str(tmp_path), context=sweep_context)

    with open(os.path.join(tmp_path, MANIFEST_FILE), encoding="utf-8") as file:
        assert len(json.load(file)["completed"]) == 2

    def fail(*args, **kwargs):
        raise AssertionError("completed scenario was run again")

    monkeypatch.setattr(step2_sweep, "run_scenario", fail)
    resumed, logs = run_sweep(config, jobs=1, output_dir=str(tmp_path), context=sweep_context)
    assert len(logs) == 2
    pd.testing.assert_frame_equal(first.scenarios, resumed.scenarios)


def test_infeasible_starts_are_excluded():
    config = short_config(N=4, steps=2, s1_0=-10.0, s2_0=-10.0)
    data = config.model_dump()
    data["sweep"].update({"v1_kmh": [36.0, 36.0], "v2_kmh": [36.0, 36.0], "modes": ["rmpc_only"]})
    config = type(config).model_validate(data)

    report, logs = run_sweep(config, jobs=1)
    assert logs[0].infeasible_start
    assert report.summary["rmpc_only"]["excluded"] == 1
    assert report.scenarios.loc[0, "result"] == "excluded"


@pytest.mark.slow
def test_grid_point_merges_safely():
    config = RootConfig()
    data = config.model_dump()
    data["sweep"].update({"v1_kmh": [46.0, 46.0], "v2_kmh": [35.0, 35.0], "modes": ["rmpc_only", "cmpc_soft"]})
    report, logs = run_sweep(RootConfig.model_validate(data), jobs=1)

    assert [log.name for log in logs] == ["rmpc_only_v1_46_v2_35", "cmpc_soft_v1_46_v2_35"]
    for _, row in report.scenarios.iterrows():
        assert row["result"] in ("front", "behind")
        assert row["max_exceedance"] <= 1e-6
        assert not row["gap_below_d_min"]
    for mode in ("rmpc_only", "cmpc_soft"):
        assert report.summary[mode]["total"] == 1 and report.summary[mode]["excluded"] == 0
