import numpy as np

from src.LinearModel import DS, S1, LinearModel, DisturbanceSegment
from src.calculations.invariance_calculations import disturbance_extremes

ADVERSARIAL_POLICIES = ("extreme_random", "worst_case_toggle")


class Agent2Policy:
    """
    Cooperative driving policy of Agent 2: speed tracking towards its own reference plus a distance-dependent
    yielding term while both vehicles approach the merge point.
    """

    def __init__(self, v_ref2: float, k_v: float = 1.0461, k_ds: float = 0.4472, ds_ref: float = 10.0,
                 ds_react: float = 10.0, gate_s2: float = -200.0) -> None:
        if ds_react < 0:
            raise ValueError("Invalid ds_react. Must be non-negative.")

        self.v_ref2: float = float(v_ref2)
        self.k_v: float = float(k_v)
        self.k_ds: float = float(k_ds)
        self.ds_ref: float = float(ds_ref)
        self.ds_react: float = float(ds_react)
        self.gate_s2: float = float(gate_s2)

    @classmethod
    def from_config(cls, scenario_config) -> "Agent2Policy":
        return cls(scenario_config.v2_0, scenario_config.k_v, scenario_config.k_ds, scenario_config.ds_ref,
                   scenario_config.ds_react, scenario_config.gate_s2)

    def in_region(self, x) -> bool:
        # Gate is non-strict in s2
        return x[DS] + x[S1] >= self.gate_s2 and x[S1] < 0

    def distance_term(self, x) -> float:
        if not self.in_region(x):
            return 0.0
        delta_s = float(x[DS])
        if 0.0 <= delta_s <= self.ds_react:
            return self.k_ds * (self.ds_ref - delta_s)
        if -self.ds_react <= delta_s < 0.0:
            return self.k_ds * (-self.ds_ref - delta_s)
        return 0.0


def clamp_agent2_accel(u2: float, v2: float, model: LinearModel, disturbance: DisturbanceSegment,
                       model_config) -> float:
    """Clip u2 to the disturbance bounds and to the accelerations that keep v2 inside [v2_min, v_max]."""
    low, high = disturbance_extremes(v2, model, disturbance, model_config)
    return float(np.clip(u2, low, high))


def agent2_accel(x, v2: float, policy: Agent2Policy, model: LinearModel, disturbance: DisturbanceSegment,
                 model_config) -> float:
    raw = policy.k_v * (policy.v_ref2 - v2) + policy.distance_term(x)
    saturated = min(max(raw, disturbance.u2_min), disturbance.u2_max)
    return clamp_agent2_accel(saturated, v2, model, disturbance, model_config)


def adversarial_accel(x, v2: float, name: str, rng: np.random.Generator, model: LinearModel,
                      disturbance: DisturbanceSegment, model_config) -> float:
    """
    Extreme Agent-2 input used to stress the controller: a random vertex of the disturbance set, or the vertex
    that closes the gap (brake while ahead, accelerate while behind).
    """
    if name == "extreme_random":
        u2 = float(rng.choice(disturbance.vertices()))
    elif name == "worst_case_toggle":
        u2 = disturbance.u2_min if x[DS] > 0 else disturbance.u2_max
    else:
        raise ValueError(f"Invalid disturbance policy '{name}'. Must be one of {ADVERSARIAL_POLICIES}.")
    return clamp_agent2_accel(u2, v2, model, disturbance, model_config)
