import os
import time
from typing import Optional

import numpy as np
from loguru import logger

from src.CmpcProblem import CmpcProblem, CmpcSolution
from src.LinearModel import DS, S1, V1
from src.NlpDescription import NlpDescription
from src.calculations.active_set_qp import solve_qp
from src.calculations.certificate_calculations import shifted_plan
from src.calculations.nlp_assembly import assemble, evaluate_nlp, nlp_dump, robust_reachable
from src.calculations.safety_calculations import d_safe
from src.utils import save_to_json

# QP steps below this leave the iterate unchanged
STALL_STEP = 1e-12


def _initial_slacks(nlp: NlpDescription, z: np.ndarray) -> np.ndarray:
    """Set every slack to the residual of its soft constraint so the start point is feasible in the slacks."""
    problem = nlp.problem
    if not problem.soft:
        return z
    z = z.copy()
    z[problem.slack_index] = 0.0
    evaluation = evaluate_nlp(nlp, z)
    for spec, value in zip(nlp.constraints, evaluation.values):
        if spec.kind == "performance_dsafe" and spec.index >= 0:
            z[spec.index] = max(z[spec.index], value)
    return z


def _merit(evaluation, mu: float) -> float:
    return evaluation.objective + mu * float(np.sum(np.maximum(evaluation.values, 0.0)))


def _kkt_residual(evaluation, multipliers: np.ndarray) -> float:
    """Scaled stationarity plus complementarity of the current iterate."""
    stationarity = evaluation.gradient + evaluation.jacobian.T @ multipliers
    scale = 1.0 + float(np.max(np.abs(evaluation.gradient), initial=0.0))
    complementarity = float(np.max(np.abs(multipliers * evaluation.values), initial=0.0))
    return max(float(np.max(np.abs(stationarity), initial=0.0)) / scale, complementarity)


def solve_nlp(nlp: NlpDescription, z0) -> CmpcSolution:
    """
    SQP with the exact (Gauss-Newton) Hessian of the quadratic cost, active-set QP subproblems and an
    l1 exact-penalty merit line search.
    """
    problem = nlp.problem
    config = problem.solver_config
    z = np.asarray(z0, dtype=float).copy()
    z = _initial_slacks(nlp, z)

    mu = 1.0
    multipliers = np.zeros(nlp.n_constraints)
    converged = False
    kkt = np.inf
    trace = []
    iteration = 0
    best_feasible = None

    for iteration in range(1, config.max_iter + 1):
        evaluation = evaluate_nlp(nlp, z)
        if evaluation.violation <= config.tol_feas and (best_feasible is None
                                                        or evaluation.objective < best_feasible[1]):
            best_feasible = (z.copy(), evaluation.objective)

        hessian = evaluation.hessian + config.hessian_reg * np.eye(nlp.n_vars)
        qp = solve_qp(hessian, evaluation.gradient, evaluation.jacobian, -evaluation.values, config.qp_max_iter)
        step = qp.p
        multipliers = qp.multipliers

        kkt = _kkt_residual(evaluation, multipliers)
        step_norm = float(np.max(np.abs(step), initial=0.0))
        trace.append({"iteration": iteration, "objective": evaluation.objective, "violation": evaluation.violation,
                      "step": step_norm, "kkt": kkt, "qp_relaxed": qp.relaxed})

        if evaluation.violation <= config.tol_feas and kkt <= config.tol_kkt:
            converged = True
            break
        if step_norm <= STALL_STEP:
            logger.debug(f"SQP step vanished at iteration {iteration} with kkt {kkt:.2e} "
                         f"(mode {problem.mode}, branch {problem.branch}).")
            break

        mu = max(mu, 1.1 * float(np.max(multipliers, initial=0.0)))
        merit = _merit(evaluation, mu)
        slope = min(float(evaluation.gradient @ step) - mu * float(np.sum(np.maximum(evaluation.values, 0.0))), 0.0)

        alpha = 1.0
        accepted = False
        while alpha >= config.min_step:
            trial = evaluate_nlp(nlp, z + alpha * step, sigma=evaluation.sigma)
            if _merit(trial, mu) <= merit + config.armijo * alpha * slope:
                accepted = True
                break
            alpha *= config.backtrack

        if not accepted:
            logger.debug(f"Line search stalled at iteration {iteration} "
                         f"(mode {problem.mode}, branch {problem.branch}).")
            break
        z = z + alpha * step

    final = evaluate_nlp(nlp, z)
    if not converged and final.violation > config.tol_feas and best_feasible is not None:
        z = best_feasible[0]
        final = evaluate_nlp(nlp, z)

    if converged:
        status = "optimal"
    elif final.violation <= config.tol_feas:
        status = "max_iter"
        logger.debug(f"SQP stopped without convergence after {iteration} iterations (kkt {kkt:.2e}).")
    else:
        status = "infeasible"

    solution = CmpcSolution(problem, z, status, final.objective, kkt, final.violation, final.robust_states,
                            final.performance_means, final.sigma, iteration, multipliers)
    solution.trace = trace
    if config.dump_nlp:
        solution.dump = nlp_dump(nlp, final, trace)
    return solution


def start_infeasible(problem: CmpcProblem) -> bool:
    """The current state itself violates the robust state constraints, so no robust plan exists."""
    x = problem.x_k
    tol = problem.solver_config.tol_feas
    if d_safe(x[S1], x[DS], x[V1], problem.safety) > tol:
        return True
    return not problem.velocity_boxes[0].contains(x, tol)


def warm_start(problem: CmpcProblem, previous: Optional[CmpcSolution]) -> np.ndarray:
    """
    Shift the previous plan by one step. The robust tail is padded with the terminal-set input at the shifted
    plan's penultimate state, the performance tail by repeating its last input.
    """
    if previous is None:
        return problem.pack(np.zeros(problem.N), np.zeros(problem.N))

    performance = None
    if previous.performance_inputs.size:
        performance = np.append(previous.performance_inputs[1:], previous.performance_inputs[-1])

    robust = None
    if previous.robust_inputs.size:
        if previous.branch is not None and problem.terminal_sets is not None:
            robust, _, _ = shifted_plan(previous, problem.x_k, problem)
        else:
            robust = np.append(previous.robust_inputs[1:], previous.robust_inputs[-1])

    if robust is None and performance is not None:
        robust = performance
    if performance is None and robust is not None:
        performance = robust

    z = problem.pack(robust, performance)
    z[:problem.n_inputs] = np.clip(z[:problem.n_inputs], problem.u1_min, problem.u1_max)
    return z


def _branch_start(nlp: NlpDescription, z0: np.ndarray) -> np.ndarray:
    """
    The warm start, or the same start with the performance plan copied from the robust one if that is closer
    to feasible.
    """
    problem = nlp.problem
    if not (problem.has_robust and problem.has_performance):
        return z0
    robust = problem.robust_inputs(z0)
    copied = problem.pack(robust, robust, problem.slacks(z0))
    if evaluate_nlp(nlp, copied).violation < evaluate_nlp(nlp, z0).violation:
        return copied
    return z0


def _empty_solution(problem: CmpcProblem, z: np.ndarray) -> CmpcSolution:
    evaluation = evaluate_nlp(assemble(problem), z)
    return CmpcSolution(problem, z, "infeasible", evaluation.objective, np.inf, evaluation.violation,
                        evaluation.robust_states, evaluation.performance_means, evaluation.sigma)


def solve(problem: CmpcProblem, previous: Optional[CmpcSolution] = None,
          dump_dir: Optional[str] = None) -> CmpcSolution:
    """
    Solve every terminal branch the robust plan can reach and keep the feasible one with the lowest objective
    (ties go to the branch chosen at the previous step).
    """
    start = time.perf_counter()
    z0 = warm_start(problem, previous)
    previous_branch = previous.branch if previous is not None else None

    if problem.has_robust and start_infeasible(problem):
        solution = _empty_solution(problem.with_branch(problem.branches()[0]), z0)
        solution.solve_time_ms = (time.perf_counter() - start) * 1000
        logger.debug("Current state violates the robust constraints; problem infeasible.")
        return solution

    candidates = []
    for branch in problem.branches():
        branch_problem = problem.with_branch(branch)
        if not robust_reachable(branch_problem):
            logger.debug(f"Branch {branch} is out of reach of the robust plan; skipped.")
            continue
        nlp = assemble(branch_problem)
        candidates.append(solve_nlp(nlp, _branch_start(nlp, z0)))

    if not candidates:
        best = _empty_solution(problem.with_branch(problem.branches()[0]), z0)
        best.solve_time_ms = (time.perf_counter() - start) * 1000
        logger.debug("No terminal branch is reachable; problem infeasible.")
        return best

    feasible = sorted((candidate for candidate in candidates if candidate.feasible), key=lambda item: item.objective)
    if feasible:
        best = feasible[0]
        for candidate in feasible:
            tie = abs(candidate.objective - best.objective) <= 1e-9 * max(1.0, abs(best.objective))
            if tie and candidate.branch == previous_branch:
                best = candidate
                break
        if len(feasible) > 1:
            best.branch_gap = feasible[1].objective - feasible[0].objective
    else:
        best = min(candidates, key=lambda item: item.violation)

    best.solve_time_ms = (time.perf_counter() - start) * 1000
    logger.debug(f"Solved {problem.mode} in {best.solve_time_ms:.1f} ms: status {best.status}, "
                 f"branch {best.branch}, objective {best.objective:.4f}.")

    if dump_dir is not None and best.dump is not None:
        os.makedirs(dump_dir, exist_ok=True)
        save_to_json(best.dump, os.path.join(dump_dir, f"nlp_{problem.mode}_{best.branch}.json"),
                     "NLP dump saved.")
    return best
