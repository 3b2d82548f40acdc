# Output directories (the base can be overridden with --out)
BASE_OUTPUT_DIR = "./outputs"
SIMULATION_DIR = "01_simulation"
SWEEP_DIR = "02_sweep"
VERIFICATION_DIR = "03_verification"

# Environment variable holding the loguru level
LOG_LEVEL_ENV = "CMPC_LOG_LEVEL"
