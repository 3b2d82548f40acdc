import sys

from loguru import logger
from pydantic import ValidationError

from src.config import load_config, save_resolved_config
from src.exceptions import CmpcError, InfeasibleStart
from src.step0_setup import apply_overrides, configure_logging, create_parser, initialize_output_directories
from src.step1_simulation import run_scenario, run_verification
from src.step2_sweep import run_sweep
from src.step3_output import save_certificate_outputs, save_scenario_outputs, save_sweep_outputs

# Exit codes
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE_START = 2


def cmd_simulate(config, output_dir: str) -> int:
    try:
        log = run_scenario(config)
    except InfeasibleStart as e:
        logger.error(str(e))
        if e.log is not None:
            save_scenario_outputs(e.log, output_dir)
        return EXIT_INFEASIBLE_START
    save_scenario_outputs(log, output_dir)
    return EXIT_OK


def cmd_sweep(config, output_dir: str) -> int:
    report, logs = run_sweep(config, output_dir=output_dir)
    save_sweep_outputs(report, logs, output_dir)
    return EXIT_OK


def cmd_verify(config, output_dir: str) -> int:
    reports, monitor = run_verification(config)
    save_certificate_outputs(reports, monitor, output_dir)
    for report in reports:
        if not report.certified:
            logger.error(f"Check '{report.name}' failed with worst slack {report.worst_slack:.4e}; "
                         f"counterexample {report.counterexample}.")
    return EXIT_OK if all(report.certified for report in reports) else EXIT_ERROR


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    configure_logging()
    args = create_parser().parse_args(argv)

    try:
        config = apply_overrides(load_config(args.config), args)
        output_dir = initialize_output_directories(args.out, args.command)
        save_resolved_config(config, output_dir)
        return COMMANDS[args.command](config, output_dir)
    except ValidationError as e:
        logger.error(f"Configuration failed validation:\n{e}")
        return EXIT_ERROR
    except (CmpcError, OSError) as e:
        logger.error(f"Command '{args.command}' failed: {e}")
        return EXIT_ERROR
    except Exception as e:
        logger.exception(f"Internal error in command '{args.command}': {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
