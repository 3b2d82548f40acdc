import os
from typing import Optional

import pandas as pd
from loguru import logger

from src.utils import save_to_csv, save_to_json

RESULT_LABELS = {"front": "F", "behind": "B"}
AGGREGATED_COLUMNS = ["slack", "cost", "merge_time", "max_exceedance", "solve_time_max_ms", "solve_time_mean_ms"]


class KpiReport:
    """
    Per-scenario KPI table of a sweep and its aggregation per controller mode and merge result.

    Scenarios flagged as infeasible at their start are excluded from every mean and counted separately;
    'none' results are counted but not averaged.
    """

    def __init__(self, rows: list[dict], modes: list[str], overall: Optional[dict] = None) -> None:
        self.modes: list[str] = list(modes)
        self.overall: dict = dict(overall or {})
        self.scenarios: pd.DataFrame = pd.DataFrame(rows) if rows else pd.DataFrame(columns=["mode", "result"])
        self.summary: dict = {}
        self.aggregate()

    def aggregate(self) -> None:
        self.summary = {}
        for mode in self.modes:
            rows = self.scenarios[self.scenarios["mode"] == mode]
            results = rows["result"]
            entry = {"total": int(rows.shape[0]), "excluded": int((results == "excluded").sum()),
                     "none": int((results == "none").sum())}

            for result, label in RESULT_LABELS.items():
                group = rows[results == result]
                stats = {"count": int(group.shape[0])}
                for column in AGGREGATED_COLUMNS:
                    values = group[column].astype(float) if column in group else pd.Series(dtype=float)
                    if column in ("max_exceedance", "solve_time_max_ms"):
                        stats[column] = float(values.max()) if not values.empty else None
                    else:
                        stats[column] = float(values.mean()) if not values.empty else None
                entry[label] = stats

            assert entry["excluded"] + entry["none"] + entry["F"]["count"] + entry["B"]["count"] == entry["total"], \
                f"Result bookkeeping of mode {mode} does not add up."
            entry["overall"] = self.overall.get(mode)
            self.summary[mode] = entry
        logger.success(f"KPI report aggregated over {self.scenarios.shape[0]} scenario runs.")

    def to_dict(self) -> dict:
        scenarios = self.scenarios.astype(object).where(self.scenarios.notna(), None).to_dict(orient="records")
        return {"modes": self.modes, "summary": self.summary, "scenarios": scenarios}

    def table(self) -> str:
        """Plain-text table with one row per mode and the F/B figures side by side."""
        header = (f"{'mode':<12}{'excl':>6}{'none':>6} | {'#F':>5}{'slack F':>11}{'cost F':>9}{'t F':>8} | "
                  f"{'#B':>5}{'slack B':>11}{'cost B':>9}{'t B':>8}")
        lines = [header, "-" * len(header)]

        def number(value, width, fmt):
            return f"{'-':>{width}}" if value is None else f"{value:>{width}{fmt}}"

        for mode, entry in self.summary.items():
            cells = [f"{mode:<12}{entry['excluded']:>6}{entry['none']:>6}"]
            for label in ("F", "B"):
                stats = entry[label]
                cells.append(f"{stats['count']:>5}" + number(stats["slack"], 11, ".2e")
                             + number(stats["cost"], 9, ".3f") + number(stats["merge_time"], 8, ".2f"))
            lines.append(" | ".join(cells))
        return "\n".join(lines) + "\n"

    def save_report_to_json(self, output_dir: str) -> str:
        os.makedirs(output_dir, exist_ok=True)
        filepath = os.path.join(output_dir, "kpi_report.json")
        save_to_json(self.to_dict(), filepath, f"KPI report saved to {filepath}.")
        return filepath

    def save_table_to_txt(self, output_dir: str) -> str:
        os.makedirs(output_dir, exist_ok=True)
        filepath = os.path.join(output_dir, "kpi_table.txt")
        try:
            with open(filepath, "w", encoding="utf-8") as file:
                file.write(self.table())
            logger.success(f"KPI table saved to {filepath}.")
        except OSError as e:
            logger.error(f"Failed to save {filepath}: {e}")
        return filepath

    def save_scenarios_to_csv(self, output_dir: str) -> str:
        os.makedirs(output_dir, exist_ok=True)
        filepath = os.path.join(output_dir, "kpi_scenarios.csv")
        save_to_csv(self.scenarios, filepath, f"Per-scenario KPIs saved to {filepath}.")
        return filepath
