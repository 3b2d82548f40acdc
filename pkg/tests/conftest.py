from functools import lru_cache

import numpy as np
import pytest

from src.GpModel import GpDataset, KernelParams
from src.LinearModel import build_model
from src.SafetyParams import SafetyParams
from src.calculations.invariance_calculations import build_terminal_sets
from src.calculations.sets_calculations import propagate_disturbance_margins
from src.config import RootConfig


def short_config(N: int = 5, steps: int = 4, mode: str = "rmpc_only", **scenario) -> RootConfig:
    """Default case study with a short horizon and closed loop."""
    data = {"solver": {"N": N}, "scenario": {"steps": steps, "mode": mode, **scenario}}
    return RootConfig.model_validate(data)


@pytest.fixture
def config():
    return RootConfig()


@pytest.fixture
def model_and_disturbance(config):
    return build_model(config.model)


@pytest.fixture
def model(model_and_disturbance):
    return model_and_disturbance[0]


@pytest.fixture
def disturbance(model_and_disturbance):
    return model_and_disturbance[1]


@pytest.fixture
def safety(config):
    return SafetyParams.from_config(config.safety)


@pytest.fixture
def margins(model, disturbance):
    return propagate_disturbance_margins(model, disturbance, 5)


@lru_cache(maxsize=None)
def certified_sets(N: int):
    """Default terminal pieces certified for horizon N, built once per session."""
    config = RootConfig()
    model, disturbance = build_model(config.model)
    return build_terminal_sets(model, disturbance, SafetyParams.from_config(config.safety), config.model,
                               config.terminal, config.verify, N)


@pytest.fixture(scope="session")
def terminal_sets():
    return certified_sets(RootConfig().solver.N)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset(rng):
    dataset = GpDataset()
    for _ in range(12):
        z = np.array([rng.uniform(-30, 30), rng.uniform(-3, 3), rng.uniform(-200, 0), rng.uniform(8, 14)])
        dataset.append(z, float(0.3 * np.sin(z[0] / 10.0)))
    return dataset


@pytest.fixture
def kernel():
    return KernelParams(0.7, [5.0, 100.0, 500.0, 100.0], 1e-6)
