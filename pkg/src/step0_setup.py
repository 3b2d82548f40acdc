import argparse
import os
import sys
from typing import Optional

from loguru import logger

from src.config import CLI_MODE_NAMES, RootConfig
from src.directories_global import BASE_OUTPUT_DIR, LOG_LEVEL_ENV, SIMULATION_DIR, SWEEP_DIR, VERIFICATION_DIR

COMMAND_DIRS = {"simulate": SIMULATION_DIR, "sweep": SWEEP_DIR, "verify": VERIFICATION_DIR}


def configure_logging(level: Optional[str] = None) -> None:
    """Replace the default loguru sink with one at the level from the environment (INFO by default)."""
    level = (level or os.environ.get(LOG_LEVEL_ENV, "INFO")).upper()
    logger.remove()
    try:
        logger.add(sys.stderr, level=level)
    except ValueError:
        logger.add(sys.stderr, level="INFO")
        logger.warning(f"Unknown log level '{level}' in {LOG_LEVEL_ENV}; using INFO.")


def initialize_output_directories(base_dir: str, command: str) -> str:
    """Create the output directory of a command with exception handling and return its path."""
    directory = os.path.join(base_dir, COMMAND_DIRS[command])
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        logger.error(f"Failed to create directory {directory}. Error: {e}")
        raise
    return directory


def create_parser():
    """Creates and returns the argument parser with the simulate, sweep and verify commands."""
    parser = argparse.ArgumentParser(description="Contingency MPC for a two-vehicle lane merge.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="Run one closed-loop scenario.")
    simulate.add_argument("config", nargs="?", default=None, help="YAML or JSON configuration file.")
    simulate.add_argument("--mode", choices=sorted(CLI_MODE_NAMES), help="Controller variant.")
    simulate.add_argument("--policy", choices=["extreme_random", "worst_case_toggle"],
                          help="Replace Agent 2's policy with an adversarial one.")
    simulate.add_argument("--seed", type=int, help="Seed of the adversarial policy.")
    simulate.add_argument("--out", default=BASE_OUTPUT_DIR, help=f"Output base directory (default {BASE_OUTPUT_DIR}).")

    sweep = subparsers.add_parser("sweep", help="Run the initial-speed grid and aggregate the KPIs.")
    sweep.add_argument("config", nargs="?", default=None, help="YAML or JSON configuration file.")
    sweep.add_argument("--modes", nargs="+", choices=sorted(CLI_MODE_NAMES), help="Controller variants.")
    sweep.add_argument("--jobs", type=int, help="Number of parallel workers.")
    sweep.add_argument("--no-resume", action="store_true", help="Ignore completed scenarios of a previous run.")
    sweep.add_argument("--out", default=BASE_OUTPUT_DIR, help=f"Output base directory (default {BASE_OUTPUT_DIR}).")

    verify = subparsers.add_parser("verify", help="Certify the terminal sets and report the model checks.")
    verify.add_argument("config", nargs="?", default=None, help="YAML or JSON configuration file.")
    verify.add_argument("--out", default=BASE_OUTPUT_DIR, help=f"Output base directory (default {BASE_OUTPUT_DIR}).")

    return parser


def apply_overrides(config: RootConfig, args) -> RootConfig:
    """Command-line flags take precedence over the file; the result is validated again."""
    data = config.model_dump()
    if getattr(args, "mode", None):
        data["scenario"]["mode"] = CLI_MODE_NAMES[args.mode]
    if getattr(args, "policy", None):
        data["scenario"]["disturbance_policy"] = args.policy
    if getattr(args, "seed", None) is not None:
        data["scenario"]["seed"] = args.seed
    if getattr(args, "modes", None):
        data["sweep"]["modes"] = [CLI_MODE_NAMES[mode] for mode in args.modes]
    if getattr(args, "jobs", None):
        data["sweep"]["jobs"] = args.jobs
    if getattr(args, "no_resume", False):
        data["sweep"]["resume"] = False
    return RootConfig.model_validate(data)
