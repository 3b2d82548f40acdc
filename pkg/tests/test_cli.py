import json
import os

import yaml

from main import EXIT_ERROR, EXIT_INFEASIBLE_START, EXIT_OK, main

FAR_SCENARIO = {"steps": 3, "mode": "rmpc_only", "s1_0": -400.0, "s2_0": -350.0, "v1_0": 12.0, "v2_0": 12.0}


def _write_config(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


def test_verify_with_defaults(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK

    directory = tmp_path / "03_verification"
    with open(directory / "verification_report.json", encoding="utf-8") as file:
        report = json.load(file)
    assert report["certified"]
    names = {item["set"] for item in report["certificates"]}
    assert {"behind", "front", "front_pass", "disjointness", "tightening", "variance_clamps"} <= names
    assert {"behind_safe", "front_safe", "front_pass_safe"} <= names
    assert report["learned_model_monitor"]["mean_inside_fraction"] == 1.0
    assert report["learned_model_monitor"]["clamp_fraction"] == 0.0
    assert os.path.exists(directory / "certificate_behind.json")
    assert os.path.exists(directory / "resolved_config.json")


def test_verify_fails_with_weak_inputs(tmp_path):
    config = _write_config(tmp_path, {"model": {"u1_min": -0.1, "u1_max": 0.1}})
    assert main(["verify", config, "--out", str(tmp_path / "out")]) == EXIT_ERROR


def test_malformed_configs(tmp_path):
    assert main(["verify", _write_config(tmp_path, {"solver": {"N": 0}}), "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["verify", _write_config(tmp_path, {"unknown": 1}, "unknown.yaml"),
                 "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["verify", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_simulate_writes_scenario_files(tmp_path):
    config = _write_config(tmp_path, {"solver": {"N": 5}, "scenario": FAR_SCENARIO})
    assert main(["simulate", config, "--out", str(tmp_path)]) == EXIT_OK

    files = os.listdir(tmp_path / "01_simulation")
    assert "rmpc_only_v1_43.2_v2_43.2.csv" in files
    assert "rmpc_only_v1_43.2_v2_43.2.json" in files
    assert "rmpc_only_v1_43.2_v2_43.2_summary.json" in files
    assert "resolved_config.json" in files


def test_mode_flag_overrides_file(tmp_path):
    config = _write_config(tmp_path, {"solver": {"N": 5}, "scenario": FAR_SCENARIO})
    assert main(["simulate", config, "--mode", "gpmpc", "--out", str(tmp_path)]) == EXIT_OK
    assert "gpmpc_only_v1_43.2_v2_43.2.csv" in os.listdir(tmp_path / "01_simulation")


def test_infeasible_start_exit_code(tmp_path):
    scenario = {**FAR_SCENARIO, "s1_0": -10.0, "s2_0": -10.0, "v1_0": 10.0, "v2_0": 10.0}
    config = _write_config(tmp_path, {"solver": {"N": 5}, "scenario": scenario})
    assert main(["simulate", config, "--out", str(tmp_path)]) == EXIT_INFEASIBLE_START
