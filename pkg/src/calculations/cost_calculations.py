import numpy as np


def velocity_profile(v1_0: float, inputs, Ts: float) -> np.ndarray:
    """Agent-1 speeds v1_j for j = 0..N; exact for both horizons since u2 never enters v1."""
    inputs = np.asarray(inputs, dtype=float)
    return v1_0 + Ts * np.concatenate([[0.0], np.cumsum(inputs)])


def stage_cost_residuals(v1_0: float, inputs, u_prev: float, v_ref: float, Ts: float, Q: float, R: float,
                         S: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Residual vector r with H = |r|^2 and its constant Jacobian with respect to the inputs.

    Blocks: sqrt(Q)(v_ref - v1_j) for j = 0..N, sqrt(R) u_j and sqrt(S)(u_j - u_{j-1}) for j = 0..N-1.
    """
    inputs = np.asarray(inputs, dtype=float)
    N = inputs.shape[0]

    tracking = np.sqrt(Q) * (v_ref - velocity_profile(v1_0, inputs, Ts))
    effort = np.sqrt(R) * inputs
    previous = np.concatenate([[u_prev], inputs[:-1]])
    smoothness = np.sqrt(S) * (inputs - previous)

    jac_tracking = -np.sqrt(Q) * Ts * np.tril(np.ones((N + 1, N)), k=-1)
    jac_effort = np.sqrt(R) * np.eye(N)
    jac_smoothness = np.sqrt(S) * (np.eye(N) - np.eye(N, k=-1))

    residuals = np.concatenate([tracking, effort, smoothness])
    jacobian = np.vstack([jac_tracking, jac_effort, jac_smoothness])
    return residuals, jacobian


def stage_cost(v1_0: float, inputs, u_prev: float, v_ref: float, Ts: float, Q: float, R: float, S: float) -> float:
    residuals, _ = stage_cost_residuals(v1_0, inputs, u_prev, v_ref, Ts, Q, R, S)
    return float(residuals @ residuals)


def slack_penalty(slacks, rho: float) -> float:
    """l1 penalty rho * |E|_1 (slacks are nonnegative)."""
    return float(rho * np.sum(np.abs(np.asarray(slacks, dtype=float))))


def total_cost(cost_robust: float, cost_performance: float, slacks, P: float, rho: float) -> float:
    """Convex combination of the two horizon costs plus the slack penalty."""
    if not 0.0 <= P <= 1.0:
        raise ValueError("Invalid P. Must lie in [0, 1].")
    return P * cost_robust + (1.0 - P) * cost_performance + slack_penalty(slacks, rho)


def closed_loop_stage_costs(v1, u1, v_ref: float, Q: float, R: float, S: float) -> np.ndarray:
    """Per-step closed-loop cost Q(v_ref - v1_k)^2 + R u_k^2 + S(u_k - u_{k-1})^2 with u_{-1} = 0."""
    v1 = np.asarray(v1, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    previous = np.concatenate([[0.0], u1[:-1]])
    return Q * (v_ref - v1) ** 2 + R * u1 ** 2 + S * (u1 - previous) ** 2
