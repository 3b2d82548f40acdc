import os
from typing import Optional

import numpy as np
import pandas as pd

from src.LinearModel import STATE_NAMES
from src.utils import save_to_csv, save_to_json

# Column order of the per-step CSV
STEP_COLUMNS = ["k", "t", *STATE_NAMES, "s2", "v2", "u1", "u2", "status", "objective", "slack_l1", "branch",
                "branch_gap", "d_safe", "certificate", "certificate_passed", "certificate_slack", "solve_time_ms",
                "n_data", "stale_offset", "gp_mean_outside", "containment_failures"]


def scenario_name(mode: str, v1_0: float, v2_0: float) -> str:
    """File-safe scenario identifier from the mode and the initial speeds in meters/second."""
    return f"{mode}_v1_{round(v1_0 * 3.6, 3):g}_v2_{round(v2_0 * 3.6, 3):g}"


class ScenarioLog:
    """Closed-loop record of one lane-merge scenario: one row per executed step plus the scenario outcome."""

    def __init__(self, mode: str, v1_0: float, v2_0: float, Ts: float, disturbance_policy: Optional[str] = None,
                 seed: int = 0) -> None:
        self.mode: str = mode
        self.v1_0: float = float(v1_0)
        self.v2_0: float = float(v2_0)
        self.Ts: float = float(Ts)
        self.disturbance_policy: Optional[str] = disturbance_policy
        self.seed: int = seed

        self.steps: list[dict] = []

        self.merge_time: Optional[float] = None
        self.merge_result: str = "none"
        self.infeasible_start: bool = False
        self.error: Optional[str] = None
        self.final_state: Optional[np.ndarray] = None

        # Learned-model monitor counters
        self.gp_mean_evaluations: int = 0
        self.gp_mean_outside: int = 0
        self.containment_checks: int = 0
        self.containment_failures: int = 0
        self.variance_clamps: int = 0
        self.psd_projections: int = 0

    @property
    def name(self) -> str:
        return scenario_name(self.mode, self.v1_0, self.v2_0)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def append_step(self, record: dict) -> None:
        if self.steps and record["k"] != self.steps[-1]["k"] + 1:
            raise ValueError("Invalid step index. Steps must be logged consecutively.")
        self.steps.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([step[name] for step in self.steps])

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.steps, columns=STEP_COLUMNS)

    def summary(self) -> dict:
        return {"name": self.name, "mode": self.mode, "v1_0": self.v1_0, "v2_0": self.v2_0, "Ts": self.Ts,
                "disturbance_policy": self.disturbance_policy, "seed": self.seed, "steps": self.n_steps,
                "merge_time": self.merge_time, "merge_result": self.merge_result,
                "infeasible_start": self.infeasible_start, "error": self.error, "final_state": self.final_state,
                "gp_mean_evaluations": self.gp_mean_evaluations, "gp_mean_outside": self.gp_mean_outside,
                "containment_checks": self.containment_checks, "containment_failures": self.containment_failures,
                "variance_clamps": self.variance_clamps, "psd_projections": self.psd_projections}

    def save_log_to_csv(self, output_dir: str) -> str:
        os.makedirs(output_dir, exist_ok=True)
        filepath = os.path.join(output_dir, f"{self.name}.csv")
        save_to_csv(self.to_dataframe(), filepath, f"Step log of scenario '{self.name}' saved to {filepath}.")
        return filepath

    def save_log_to_json(self, output_dir: str) -> str:
        os.makedirs(output_dir, exist_ok=True)
        filepath = os.path.join(output_dir, f"{self.name}.json")
        save_to_json({**self.summary(), "steps": self.steps}, filepath,
                     f"Full log of scenario '{self.name}' saved to {filepath}.")
        return filepath
