import json
import os
import time
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from tqdm import tqdm

from src.KpiReport import KpiReport
from src.ScenarioLog import ScenarioLog, scenario_name
from src.calculations.kpi_calculations import included, kpi_cost, kpi_slack, scenario_kpis
from src.config import RootConfig
from src.exceptions import CmpcError, InfeasibleStart
from src.step1_simulation import ControllerContext, build_controller_context, run_scenario, scenario_config
from src.utils import load_object, save_object, save_to_json

MANIFEST_FILE = "manifest.json"


def speed_grid(sweep_config) -> list[tuple[float, float]]:
    """Initial speed pairs (km/h) in row-major order over (v1_0, v2_0), bounds inclusive."""
    step = sweep_config.step_kmh
    v1_values = np.arange(sweep_config.v1_kmh[0], sweep_config.v1_kmh[1] + step / 2, step)
    v2_values = np.arange(sweep_config.v2_kmh[0], sweep_config.v2_kmh[1] + step / 2, step)
    return [(float(v1), float(v2)) for v1 in v1_values for v2 in v2_values]


def sweep_tasks(config: RootConfig, modes: list[str]) -> list[tuple[str, float, float]]:
    return [(mode, v1, v2) for mode in modes for v1, v2 in speed_grid(config.sweep)]


def run_sweep_task(config: RootConfig, context: ControllerContext, mode: str, v1_kmh: float,
                   v2_kmh: float) -> ScenarioLog:
    """One scenario of the sweep; failures come back as flagged logs instead of exceptions."""
    task_config = scenario_config(config, mode, v1_kmh / 3.6, v2_kmh / 3.6)
    try:
        return run_scenario(task_config, context)
    except InfeasibleStart as e:
        return e.log
    except CmpcError as e:
        logger.warning(f"Scenario {scenario_name(mode, v1_kmh / 3.6, v2_kmh / 3.6)} failed: {e}")
        log = ScenarioLog(mode, v1_kmh / 3.6, v2_kmh / 3.6, config.model.Ts, seed=config.scenario.seed)
        log.error = f"{type(e).__name__}: {e}"
        return log


def _load_manifest(output_dir: str) -> list[str]:
    filepath = os.path.join(output_dir, MANIFEST_FILE)
    if not os.path.exists(filepath):
        return []
    try:
        with open(filepath, "r", encoding="utf-8") as file:
            return list(json.load(file)["completed"])
    except (OSError, ValueError, KeyError) as e:
        logger.warning(f"Ignoring unreadable sweep manifest {filepath}: {e}")
        return []


def _save_manifest(output_dir: str, completed: list[str]) -> None:
    save_to_json({"completed": completed}, os.path.join(output_dir, MANIFEST_FILE),
                 f"Sweep manifest updated ({len(completed)} scenarios).")


def mode_kpis(config: RootConfig, logs: list[ScenarioLog]) -> dict:
    """Slack and closed-loop cost KPIs of one mode, averaged over its included scenarios."""
    kept = [log for log in logs if included(log)]
    solver = config.solver
    return {"scenarios": len(kept), "slack": kpi_slack(kept),
            "cost": kpi_cost(kept, config.model.v_ref1, solver.Q, solver.R, solver.S)}


def run_sweep(config: RootConfig, modes: Optional[list[str]] = None, jobs: Optional[int] = None,
              output_dir: Optional[str] = None, context: Optional[ControllerContext] = None) -> tuple[
    KpiReport, list[ScenarioLog]]:
    """
    Run every (mode, v1_0, v2_0) scenario of the grid and aggregate the KPIs.

    Completed scenarios are stored under ``output_dir`` and skipped on a resumed run. Results are reduced in task
    order, so the report does not depend on the number of workers.
    """
    modes = list(modes or config.sweep.modes)
    jobs = jobs or config.sweep.jobs
    tasks = sweep_tasks(config, modes)
    names = [scenario_name(mode, v1 / 3.6, v2 / 3.6) for mode, v1, v2 in tasks]
    start = time.perf_counter()

    if context is None:
        context = build_controller_context(config, with_terminal_sets=any(mode != "gpmpc_only" for mode in modes))

    logs: dict[str, ScenarioLog] = {}
    completed: list[str] = []
    objects_dir = os.path.join(output_dir, "objects") if output_dir else None
    if output_dir and config.sweep.resume:
        for name in _load_manifest(output_dir):
            if name in names:
                logs[name] = load_object(os.path.join(objects_dir, f"{name}.object.gz"), f"scenario {name}")
                completed.append(name)
        if completed:
            logger.info(f"Resuming sweep: {len(completed)} of {len(tasks)} scenarios already completed.")

    pending = [task for task, name in zip(tasks, names) if name not in logs]
    results = Parallel(n_jobs=jobs, return_as="generator")(
        delayed(run_sweep_task)(config, context, *task) for task in pending)

    for log in tqdm(results, total=len(pending), desc="Sweep scenarios"):
        logs[log.name] = log
        if output_dir:
            save_object(log, objects_dir, log.name, f"Scenario {log.name}")
            completed.append(log.name)
            _save_manifest(output_dir, completed)

    ordered = [logs[name] for name in names]
    rows = [scenario_kpis(log, config.model, config.solver, config.safety.d_min) for log in ordered]
    report = KpiReport(rows, modes, {mode: mode_kpis(config, [log for log in ordered if log.mode == mode])
                                     for mode in modes})

    elapsed_ms = (time.perf_counter() - start) * 1000
    logger.info(f"Sweep of {len(tasks)} scenarios finished in {elapsed_ms:.1f} ms.")
    return report, ordered
