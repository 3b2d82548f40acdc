from typing import Optional

import numpy as np

from src.LinearModel import DS, S1
from src.calculations.cost_calculations import closed_loop_stage_costs


def _trajectory(log, name: str, index: int) -> np.ndarray:
    """Logged column followed by the matching entry of the final state x_m, when the run recorded one."""
    values = log.column(name) if log.n_steps else np.empty(0)
    if log.final_state is None:
        return values
    return np.append(values, float(log.final_state[index]))


def _merge_step(log) -> Optional[int]:
    """Index of the first state with Agent 1 past the merge point; the final state counts as index n_steps."""
    crossed = np.flatnonzero(_trajectory(log, "s1", S1) > 0.0)
    return int(crossed[0]) if crossed.size else None


def kpi_merge_time(log) -> Optional[float]:
    step = _merge_step(log)
    return None if step is None else step * log.Ts


def kpi_result(log) -> str:
    """'front' when Agent 2 is behind at the merge crossing, 'behind' otherwise, 'none' without a crossing."""
    step = _merge_step(log)
    if step is None:
        return "none"
    return "front" if _trajectory(log, "delta_s", DS)[step] < 0 else "behind"


def scenario_slack(log) -> float:
    """Mean over the executed steps of the l1 norm of the applied plan's slacks."""
    if not log.n_steps:
        return 0.0
    return float(np.mean(log.column("slack_l1")))


def scenario_cost(log, v_ref: float, Q: float, R: float, S: float) -> float:
    if not log.n_steps:
        return 0.0
    return float(np.mean(closed_loop_stage_costs(log.column("v1"), log.column("u1"), v_ref, Q, R, S)))


def kpi_slack(logs) -> float:
    """Mean over scenarios of the per-scenario mean slack l1 norm."""
    logs = list(logs)
    if not logs:
        return 0.0
    return float(np.mean([scenario_slack(log) for log in logs]))


def kpi_cost(logs, v_ref: float, Q: float, R: float, S: float) -> float:
    logs = list(logs)
    if not logs:
        return 0.0
    return float(np.mean([scenario_cost(log, v_ref, Q, R, S) for log in logs]))


def included(log) -> bool:
    """Scenarios that started feasibly and ran to the end enter the means."""
    return not log.infeasible_start and log.error is None


def max_exceedance(log) -> float:
    """Largest positive value of the safety function over the executed steps (0 when never violated)."""
    if not log.n_steps:
        return 0.0
    return max(float(np.max(log.column("d_safe"))), 0.0)


def min_gap_after_merge(log) -> Optional[float]:
    step = _merge_step(log)
    if step is None:
        return None
    return float(np.min(np.abs(_trajectory(log, "delta_s", DS)[step:])))


def scenario_kpis(log, model_config, solver_config, d_min: float) -> dict:
    """One per-scenario row with every KPI and diagnostic that the report aggregates."""
    excluded = not included(log)
    row = {"mode": log.mode, "v1_0_kmh": round(log.v1_0 * 3.6, 6), "v2_0_kmh": round(log.v2_0 * 3.6, 6),
           "infeasible_start": log.infeasible_start, "error": log.error,
           "result": "excluded" if excluded else log.merge_result, "steps": log.n_steps}
    if excluded:
        return row

    solve_times = log.column("solve_time_ms")
    gap = min_gap_after_merge(log)
    final_v1 = float(log.final_state[3])
    final_v2 = float(log.final_state[1] + log.final_state[3])
    row.update({
        "slack": scenario_slack(log),
        "cost": scenario_cost(log, model_config.v_ref1, solver_config.Q, solver_config.R, solver_config.S),
        "merge_time": log.merge_time,
        "max_exceedance": max_exceedance(log),
        "min_gap_after_merge": gap,
        "gap_below_d_min": gap is not None and gap < d_min,
        "solve_time_max_ms": float(np.max(solve_times)),
        "solve_time_mean_ms": float(np.mean(solve_times)),
        "final_v1": final_v1,
        "final_v1_to_ref": abs(model_config.v_ref1 - final_v1),
        "final_v1_to_v2": abs(final_v2 - final_v1),
        "infeasible_steps": int(np.sum(log.column("status") == "infeasible")),
        "gp_mean_outside": log.gp_mean_outside,
        "containment_failures": log.containment_failures,
    })
    return row
