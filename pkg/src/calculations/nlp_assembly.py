from typing import Optional

import numpy as np
from scipy.optimize import linprog

from src.CmpcProblem import CmpcProblem
from src.LinearModel import DS, S1, V1
from src.NlpDescription import ConstraintEvaluation, ConstraintSpec, NlpDescription, NlpEvaluation
from src.calculations.cost_calculations import stage_cost, stage_cost_residuals, total_cost
from src.calculations.gp_calculations import (agent2_pos_std, assemble_joint, posterior_mean, posterior_mean_grad,
                                              propagate)
from src.calculations.safety_calculations import SIDES, binding_side, d_safe_gp_grad, d_safe_robust_grad


def assemble(problem: CmpcProblem) -> NlpDescription:
    """Ordered constraint list of the single-shooting NLP for the problem's mode and terminal branch."""
    N = problem.N
    specs = []

    input_variables = sorted(set(problem.robust_index.tolist()) | set(problem.performance_index.tolist()))
    specs += [ConstraintSpec("input_lb", -1, index) for index in input_variables]
    specs += [ConstraintSpec("input_ub", -1, index) for index in input_variables]
    specs += [ConstraintSpec("slack_nonneg", j, index) for j, index in enumerate(problem.slack_index)]

    if problem.has_robust:
        for j in range(1, N + 1):
            specs.append(ConstraintSpec("robust_velocity_lb", j))
            specs.append(ConstraintSpec("robust_velocity_ub", j))
            specs.append(ConstraintSpec("robust_dsafe", j))
        terminal = problem.terminal_set()
        if terminal is not None:
            specs += [ConstraintSpec("terminal", N, i) for i in range(terminal.size)]

    if problem.has_performance:
        for j in range(1, N + 1):
            specs.append(ConstraintSpec("performance_velocity_lb", j))
            specs.append(ConstraintSpec("performance_velocity_ub", j))
        steps = range(N + 1) if problem.soft else range(1, N + 1)
        for j in steps:
            slack = problem.slack_index[j] if problem.soft else -1
            specs += [ConstraintSpec("performance_dsafe", j, slack, side) for side in SIDES]

    return NlpDescription(problem, specs)


def robust_rollout(problem: CmpcProblem, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nominal states x_bar_j (j = 0..N) and their sensitivities d x_bar_j / d u_bar (N+1 x 4 x N)."""
    model = problem.model
    N = inputs.shape[0]
    states = np.zeros((N + 1, 4))
    sensitivities = np.zeros((N + 1, 4, N))
    states[0] = problem.x_k
    for j in range(N):
        states[j + 1] = model.nominal_step(states[j], inputs[j])
        sensitivities[j + 1] = model.A @ sensitivities[j]
        sensitivities[j + 1][:, j] += model.B1
    return states, sensitivities


def robust_reachable(problem: CmpcProblem) -> bool:
    """
    LP relaxation of the robust horizon: input bounds, tightened velocity boxes and the terminal set, without
    the safety-distance rows. False proves the branch infeasible before any SQP iteration is spent on it.
    """
    terminal = problem.terminal_set()
    if not problem.has_robust or terminal is None:
        return True

    N = problem.N
    free, sensitivities = robust_rollout(problem, np.zeros(N))
    lower = np.array([problem.velocity_boxes[j].lower[V1] for j in range(1, N + 1)])
    upper = np.array([problem.velocity_boxes[j].upper[V1] for j in range(1, N + 1)])
    speed = sensitivities[1:, V1, :]

    A_ub = np.vstack([-speed, speed, -(terminal.normals @ sensitivities[N])])
    b_ub = np.concatenate([free[1:, V1] - lower, upper - free[1:, V1], terminal.normals @ free[N] - terminal.offsets])
    b_ub = b_ub + problem.solver_config.tol_feas
    result = linprog(np.zeros(N), A_ub=A_ub, b_ub=b_ub, bounds=[(problem.u1_min, problem.u1_max)] * N,
                     method="highs")
    return result.status != 2


def performance_rollout(problem: CmpcProblem, inputs: np.ndarray,
                        sigma: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    GP mean rollout x_hat_j, its sensitivities and the Agent-2 position std along it.

    A given ``sigma`` is used as is (frozen); otherwise the covariance is propagated along the rollout.
    """
    model, gp = problem.model, problem.gp
    N = inputs.shape[0]
    means = np.zeros((N + 1, 4))
    sensitivities = np.zeros((N + 1, 4, N))
    means[0] = problem.x_k

    frozen = sigma is not None
    sigma_out = np.asarray(sigma, dtype=float).copy() if frozen else np.zeros(N + 1)
    joint = None if frozen else assemble_joint(gp, problem.x_k, np.zeros((4, 4)))

    for j in range(N):
        gradient = posterior_mean_grad(gp, means[j])
        if frozen:
            means[j + 1] = model.A @ means[j] + model.B1 * inputs[j] + model.B2 * posterior_mean(gp, means[j])
        else:
            means[j + 1], joint = propagate(gp, means[j], joint, inputs[j], model)
            sigma_out[j + 1] = agent2_pos_std(joint)
        sensitivities[j + 1] = (model.A + np.outer(model.B2, gradient)) @ sensitivities[j]
        sensitivities[j + 1][:, j] += model.B1

    return means, sensitivities, sigma_out


def _row(problem: CmpcProblem, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    row = np.zeros(problem.n_vars)
    row[index] += values
    return row


def _dsafe_row(problem: CmpcProblem, index: np.ndarray, state: np.ndarray, sensitivity: np.ndarray,
               margin: float) -> tuple[float, np.ndarray, str]:
    value, grad = d_safe_robust_grad(state[S1], state[DS], state[V1], margin, problem.safety)
    chain = grad[0] * sensitivity[S1] + grad[1] * sensitivity[DS] + grad[2] * sensitivity[V1]
    return value, _row(problem, index, chain), f"dsafe_{binding_side(state[DS])}"


def _dsafe_gp_row(problem: CmpcProblem, state: np.ndarray, sensitivity: np.ndarray, sigma_s2: float,
                  side: str) -> tuple[float, np.ndarray, str]:
    value, grad = d_safe_gp_grad(state[S1], state[DS], state[V1], sigma_s2, side, problem.safety)
    chain = grad[0] * sensitivity[S1] + grad[1] * sensitivity[DS] + grad[2] * sensitivity[V1]
    return value, _row(problem, problem.performance_index, chain), f"dsafe_gp_{side}"


def _horizon_cost(problem: CmpcProblem, inputs: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Stage cost H of one horizon with its gradient and Gauss-Newton Hessian (exact, H is quadratic)."""
    weights = (problem.u_prev, problem.v_ref, problem.model.Ts, problem.Q, problem.R, problem.S)
    residuals, jac = stage_cost_residuals(problem.x_k[V1], inputs, *weights)
    return stage_cost(problem.x_k[V1], inputs, *weights), 2.0 * (jac.T @ residuals), 2.0 * (jac.T @ jac)


def robust_weight(problem: CmpcProblem) -> float:
    """P of the cost combination, collapsed to 1 or 0 when only one horizon exists."""
    if not problem.has_performance:
        return 1.0
    return problem.P if problem.has_robust else 0.0


def evaluate_nlp(nlp: NlpDescription, z, sigma: Optional[np.ndarray] = None) -> NlpEvaluation:
    """
    Objective (with exact Hessian of the quadratic cost), constraints and analytic gradients at z.

    The GP-adapted constraint treats sigma as a constant; pass ``sigma`` to freeze it at a given rollout.
    """
    problem = nlp.problem
    z = np.asarray(z, dtype=float)
    n = problem.n_vars
    N = problem.N

    gradient = np.zeros(n)
    hessian = np.zeros((n, n))
    weight = robust_weight(problem)
    cost_robust = cost_performance = None

    robust_states = np.empty((0, 4))
    robust_sens = None
    if problem.has_robust:
        robust_states, robust_sens = robust_rollout(problem, problem.robust_inputs(z))
        cost_robust, grad, hess = _horizon_cost(problem, problem.robust_inputs(z))
        gradient[problem.robust_index] += weight * grad
        hessian[np.ix_(problem.robust_index, problem.robust_index)] += weight * hess

    performance_means = np.empty((0, 4))
    performance_sens = None
    sigma_out = np.zeros(N + 1)
    if problem.has_performance:
        performance_means, performance_sens, sigma_out = performance_rollout(problem, problem.performance_inputs(z),
                                                                             sigma)
        cost_performance, grad, hess = _horizon_cost(problem, problem.performance_inputs(z))
        gradient[problem.performance_index] += (1.0 - weight) * grad
        hessian[np.ix_(problem.performance_index, problem.performance_index)] += (1.0 - weight) * hess

    # slacks are kept nonnegative by constraint, so the l1 penalty is linear on the feasible side
    objective = total_cost(cost_robust or 0.0, cost_performance or 0.0, problem.slacks(z), weight, problem.rho)
    gradient[problem.slack_index] += problem.rho

    terminal = problem.terminal_set() if problem.has_robust else None
    margins = problem.margins
    evaluations = []
    groups = []

    for spec in nlp.constraints:
        row = np.zeros(n)
        j = spec.step
        if spec.kind == "input_lb":
            row[spec.index] = -1.0
            value, tag = problem.u1_min - z[spec.index], "input_lb"
        elif spec.kind == "input_ub":
            row[spec.index] = 1.0
            value, tag = z[spec.index] - problem.u1_max, "input_ub"
        elif spec.kind == "slack_nonneg":
            row[spec.index] = -1.0
            value, tag = -z[spec.index], "slack_nonneg"
        elif spec.kind in ("robust_velocity_lb", "performance_velocity_lb"):
            states, sens, index = _horizon(problem, spec.kind, robust_states, robust_sens, performance_means,
                                           performance_sens)
            row = _row(problem, index, -sens[j][V1])
            value, tag = problem.velocity_boxes[j].lower[V1] - states[j][V1], "velocity_lb"
        elif spec.kind in ("robust_velocity_ub", "performance_velocity_ub"):
            states, sens, index = _horizon(problem, spec.kind, robust_states, robust_sens, performance_means,
                                           performance_sens)
            row = _row(problem, index, sens[j][V1])
            value, tag = states[j][V1] - problem.velocity_boxes[j].upper[V1], "velocity_ub"
        elif spec.kind == "robust_dsafe":
            value, row, tag = _dsafe_row(problem, problem.robust_index, robust_states[j], robust_sens[j],
                                         margins[j][DS])
        elif spec.kind == "terminal":
            normal = terminal.normals[spec.index]
            value = terminal.offsets[spec.index] - float(normal @ robust_states[N])
            row = _row(problem, problem.robust_index, -(normal @ robust_sens[N]))
            tag = "terminal"
        else:
            value, row, tag = _dsafe_gp_row(problem, performance_means[j], performance_sens[j], sigma_out[j],
                                            spec.side)
            if spec.index >= 0:
                value -= z[spec.index]
                row[spec.index] -= 1.0

        evaluations.append(ConstraintEvaluation(value, row, tag))
        groups.append(spec.group)

    return NlpEvaluation(objective, gradient, hessian, evaluations, robust_states, performance_means, sigma_out,
                         groups, cost_robust, cost_performance)


def _horizon(problem, kind, robust_states, robust_sens, performance_means, performance_sens):
    if kind.startswith("robust"):
        return robust_states, robust_sens, problem.robust_index
    return performance_means, performance_sens, problem.performance_index


def nlp_dump(nlp: NlpDescription, evaluation: NlpEvaluation, trace: list[dict]) -> dict:
    """JSON-ready snapshot of the layout, the tagged constraints at the final iterate and the iterate trace."""
    return {"layout": nlp.layout(),
            "constraints": [{"kind": spec.kind, "step": spec.step, "tag": tag, "value": float(value)}
                            for spec, tag, value in zip(nlp.constraints, evaluation.tags, evaluation.values)],
            "objective": evaluation.objective,
            "trace": trace}
