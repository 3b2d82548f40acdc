import os

from loguru import logger

from src.KpiReport import KpiReport
from src.ScenarioLog import ScenarioLog
from src.TerminalSets import CertificateReport
from src.utils import save_to_json


def save_scenario_outputs(log: ScenarioLog, output_dir: str) -> dict:
    """Step CSV, full-fidelity JSON and a short summary JSON of one scenario."""
    os.makedirs(output_dir, exist_ok=True)
    summary_path = os.path.join(output_dir, f"{log.name}_summary.json")
    save_to_json(log.summary(), summary_path, f"Summary of scenario '{log.name}' saved to {summary_path}.")
    return {"csv": log.save_log_to_csv(output_dir), "json": log.save_log_to_json(output_dir),
            "summary": summary_path}


def save_sweep_outputs(report: KpiReport, logs: list[ScenarioLog], output_dir: str) -> None:
    """KPI report, text table, per-scenario KPI table and one step CSV per executed scenario."""
    report.save_report_to_json(output_dir)
    report.save_table_to_txt(output_dir)
    report.save_scenarios_to_csv(output_dir)

    logs_dir = os.path.join(output_dir, "scenarios")
    for log in logs:
        if log.n_steps:
            log.save_log_to_csv(logs_dir)
    logger.info(f"\n{report.table()}")


def save_certificate_outputs(reports: list[CertificateReport], monitor: dict, output_dir: str) -> str:
    """Terminal-set certificates, one JSON each, plus a combined verification report."""
    os.makedirs(output_dir, exist_ok=True)
    for report in reports:
        report.save_report_to_json(os.path.join(output_dir, f"certificate_{report.name}.json"))

    filepath = os.path.join(output_dir, "verification_report.json")
    data = {"certified": all(report.certified for report in reports),
            "certificates": [report.to_dict() for report in reports], "learned_model_monitor": monitor}
    save_to_json(data, filepath, f"Verification report saved to {filepath}.")
    return filepath
