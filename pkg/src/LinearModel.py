import numpy as np

# State layout: x = [delta_s, delta_v, s1, v1]
DS, DV, S1, V1 = 0, 1, 2, 3
STATE_NAMES = ("delta_s", "delta_v", "s1", "v1")


def make_state(delta_s: float, delta_v: float, s1: float, v1: float) -> np.ndarray:
    """Build a lane-merge state vector, rejecting NaN and infinite entries."""
    state = np.array([delta_s, delta_v, s1, v1], dtype=float)
    if not np.all(np.isfinite(state)):
        raise ValueError(f"Invalid state {state}. All entries must be finite.")
    return state


def state_from_positions(s1: float, v1: float, s2: float, v2: float) -> np.ndarray:
    return make_state(s2 - s1, v2 - v1, s1, v1)


def agent2_position(state: np.ndarray) -> float:
    return float(state[DS] + state[S1])


def agent2_velocity(state: np.ndarray) -> float:
    return float(state[DV] + state[V1])


class LinearModel:
    """Double-integrator merge dynamics x+ = A x + B1 u1 + B2 u2 for sampling period Ts."""

    def __init__(self, Ts: float) -> None:
        if Ts <= 0:
            raise ValueError("Invalid sampling period. Ts must be positive.")

        self.Ts: float = float(Ts)
        half_sq = 0.5 * Ts ** 2

        self.A: np.ndarray = np.array([[1.0, Ts, 0.0, 0.0],
                                       [0.0, 1.0, 0.0, 0.0],
                                       [0.0, 0.0, 1.0, Ts],
                                       [0.0, 0.0, 0.0, 1.0]])
        self.B1: np.ndarray = np.array([-half_sq, -Ts, half_sq, Ts])
        self.B2: np.ndarray = np.array([half_sq, Ts, 0.0, 0.0])

    def nominal_step(self, x: np.ndarray, u1: float) -> np.ndarray:
        return self.A @ x + self.B1 * u1

    def true_step(self, x: np.ndarray, u1: float, u2: float) -> np.ndarray:
        return self.A @ x + self.B1 * u1 + self.B2 * u2

    def matrix_power_B2(self, i: int) -> np.ndarray:
        """Return A^i B2 (closed form: only the delta_s entry grows with i)."""
        Ts = self.Ts
        return np.array([0.5 * Ts ** 2 + i * Ts ** 2, Ts, 0.0, 0.0])

    def rollout(self, x0: np.ndarray, inputs) -> np.ndarray:
        """Nominal trajectory (len(inputs) + 1 states) for a sequence of Agent-1 inputs."""
        states = [np.asarray(x0, dtype=float)]
        for u1 in inputs:
            states.append(self.nominal_step(states[-1], u1))
        return np.array(states)


class DisturbanceSegment:
    """The one-dimensional disturbance set W = B2 * [u2_min, u2_max]."""

    def __init__(self, u2_min: float, u2_max: float, direction: np.ndarray) -> None:
        if not u2_min <= 0 <= u2_max:
            raise ValueError("Invalid disturbance bounds. Must satisfy u2_min <= 0 <= u2_max.")

        self.u2_min: float = float(u2_min)
        self.u2_max: float = float(u2_max)
        self.direction: np.ndarray = np.asarray(direction, dtype=float)

    @property
    def magnitude(self) -> float:
        return max(abs(self.u2_min), abs(self.u2_max))

    def contains(self, u2: float, tol: float = 1e-12) -> bool:
        return self.u2_min - tol <= u2 <= self.u2_max + tol

    def vertices(self) -> np.ndarray:
        return np.array([self.u2_min, self.u2_max])


def build_model(model_config) -> tuple[LinearModel, DisturbanceSegment]:
    """Create the prediction model and its disturbance segment from the model configuration block."""
    model = LinearModel(model_config.Ts)
    disturbance = DisturbanceSegment(model_config.u2_min, model_config.u2_max, model.B2)
    return model, disturbance
