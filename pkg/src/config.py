import json
import os
from typing import Optional

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.exceptions import ConfigError

# Controller modes and the names accepted on the command line
MODES = ("rmpc_only", "gpmpc_only", "cmpc_hard", "cmpc_soft")
CLI_MODE_NAMES = {"rmpc": "rmpc_only", "gpmpc": "gpmpc_only", "cmpc-hard": "cmpc_hard", "cmpc-soft": "cmpc_soft"}


class StrictBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(StrictBlock):
    Ts: float = Field(0.25, gt=0)
    u1_min: float = -3.0
    u1_max: float = 5.0
    u2_min: float = -0.5
    u2_max: float = 0.5
    v_ref1: float = Field(50 / 3.6, gt=0)
    v_max: Optional[float] = None
    v2_min: float = Field(25 / 3.6, ge=0)

    @model_validator(mode="after")
    def check_bounds(self):
        if self.v_max is None:
            self.v_max = 1.1 * self.v_ref1
        if not self.u1_min < self.u1_max:
            raise ValueError("u1_min must be smaller than u1_max.")
        if not self.u2_min <= 0 <= self.u2_max:
            raise ValueError("The disturbance bounds must contain zero (u2_min <= 0 <= u2_max).")
        if not self.v2_min < self.v_max:
            raise ValueError("Agent 2 speed bounds must satisfy v2_min < v_max.")
        return self


class SafetyConfig(StrictBlock):
    d_min: float = Field(5.0, gt=0)
    tau: float = Field(0.5, ge=0)
    delta_smooth: float = Field(1.0, gt=0)
    beta_act: float = Field(0.1, gt=0)
    s_act: float = Field(-50.0, lt=0)
    safety_margin: float = Field(1.0, ge=0)


class GpConfig(StrictBlock):
    sigma_d: float = Field(0.7, gt=0)
    length_scales: list[float] = [5.0, 100.0, 500.0, 100.0]
    jitter: float = Field(1e-6, gt=0)
    n_inducing: int = Field(4, ge=1)
    sparse_threshold: int = Field(40, ge=0)
    capacity: Optional[int] = Field(None, ge=1)

    @field_validator("length_scales")
    @classmethod
    def check_length_scales(cls, value):
        if len(value) != 4 or any(item <= 0 for item in value):
            raise ValueError("length_scales must hold four positive entries (diagonal of L_d).")
        return value


class SolverConfig(StrictBlock):
    N: int = Field(20, ge=1)
    Q: float = Field(10.0, gt=0)
    R: float = Field(1.0, gt=0)
    S: float = Field(10.0, gt=0)
    P: float = Field(0.5, ge=0, le=1)
    rho: float = Field(1e4, gt=0)
    tol_kkt: float = Field(1e-6, gt=0)
    tol_feas: float = Field(1e-6, gt=0)
    max_iter: int = Field(50, ge=1)
    backtrack: float = Field(0.5, gt=0, lt=1)
    armijo: float = Field(1e-4, gt=0, lt=1)
    min_step: float = Field(1e-8, gt=0)
    hessian_reg: float = Field(1e-6, gt=0)
    qp_max_iter: int = Field(500, ge=1)
    dump_nlp: bool = False


class TerminalConfig(StrictBlock):
    r1: float = Field(0.0, ge=0)
    r2: float = Field(0.0, ge=0)
    kappa1: float = Field(4.5, gt=0)
    dv1: float = Field(1.0, ge=0)
    s_front: float = -200.0
    passing: bool = True
    max_inflations: int = Field(6, ge=0)
    kappa_step: float = Field(0.5, ge=0)
    dv1_step: float = Field(0.25, ge=0)
    r_step: float = Field(1.0, ge=0)


class VerifyConfig(StrictBlock):
    grid_density: int = Field(7, ge=2)
    ds_range: list[float] = [-60.0, 60.0]
    dv_range: list[float] = [-8.0, 8.0]
    s1_range: list[float] = [-200.0, 50.0]
    v1_range: Optional[list[float]] = None
    chunk_size: int = Field(2000, ge=1)
    slack_tol: float = Field(1e-9, ge=0)
    monitor_states: int = Field(200, ge=1)
    dataset_csv: Optional[str] = None


class ScenarioConfig(StrictBlock):
    v1_0: float = Field(46 / 3.6, ge=0)
    v2_0: float = Field(35 / 3.6, ge=0)
    s1_0: float = -200.0
    s2_0: float = -180.0
    steps: int = Field(161, ge=1)
    mode: str = "cmpc_soft"
    disturbance_policy: Optional[str] = None
    seed: int = 0
    k_v: float = 1.0461
    k_ds: float = 0.4472
    ds_ref: float = 10.0
    ds_react: float = 10.0
    gate_s2: float = -200.0
    enforce_assumption2: bool = True

    @field_validator("mode")
    @classmethod
    def check_mode(cls, value):
        value = CLI_MODE_NAMES.get(value, value)
        if value not in MODES:
            raise ValueError(f"Invalid mode. Must be one of {MODES}.")
        return value

    @field_validator("disturbance_policy")
    @classmethod
    def check_policy(cls, value):
        if value is not None and value not in ("extreme_random", "worst_case_toggle"):
            raise ValueError("Invalid disturbance_policy. Must be 'extreme_random' or 'worst_case_toggle'.")
        return value


class SweepConfig(StrictBlock):
    v1_kmh: list[float] = [40.0, 50.0]
    v2_kmh: list[float] = [30.0, 50.0]
    step_kmh: float = Field(1.0, gt=0)
    modes: list[str] = ["rmpc_only", "gpmpc_only", "cmpc_soft"]
    jobs: int = 1
    resume: bool = True

    @field_validator("modes")
    @classmethod
    def check_modes(cls, value):
        value = [CLI_MODE_NAMES.get(item, item) for item in value]
        for item in value:
            if item not in MODES:
                raise ValueError(f"Invalid mode '{item}'. Must be one of {MODES}.")
        return value


class RootConfig(StrictBlock):
    model: ModelConfig = Field(default_factory=ModelConfig)
    safety: SafetyConfig = Field(default_factory=SafetyConfig)
    gp: GpConfig = Field(default_factory=GpConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    terminal: TerminalConfig = Field(default_factory=TerminalConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @model_validator(mode="after")
    def check_scenario_speeds(self):
        if self.scenario.v2_0 < self.model.v2_min:
            raise ValueError("scenario.v2_0 must not be below model.v2_min.")
        for name in ("v1_0", "v2_0"):
            if getattr(self.scenario, name) > self.model.v_max:
                raise ValueError(f"scenario.{name} must lie within [0, v_max].")
        return self


def load_config(path: Optional[str] = None) -> RootConfig:
    """Read a YAML or JSON configuration file and validate it. ``None`` yields the defaults."""
    if path is None:
        return RootConfig()

    try:
        with open(path, "r", encoding="utf-8") as file:
            raw = yaml.safe_load(file) or {}
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Failed to read configuration {path}: {e}")
        raise ConfigError(f"Cannot read configuration file {path}: {e}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"Configuration {path} must contain a mapping at top level.")

    try:
        config = RootConfig.model_validate(raw)
    except ValidationError as e:
        logger.error(f"Configuration {path} failed validation:\n{e}")
        raise ConfigError(str(e)) from e

    logger.info(f"Configuration loaded from {path}.")
    return config


def save_resolved_config(config: RootConfig, output_dir: str) -> str:
    """Write the fully resolved configuration next to the run outputs."""
    os.makedirs(output_dir, exist_ok=True)
    filepath = os.path.join(output_dir, "resolved_config.json")
    try:
        with open(filepath, "w", encoding="utf-8") as file:
            json.dump(config.model_dump(), file, indent=2)
        logger.success(f"Resolved configuration saved to {filepath}.")
    except OSError as e:
        logger.error(f"Failed to save {filepath}: {e}")
    return filepath
