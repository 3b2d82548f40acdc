from typing import Optional

import numpy as np

from src.CmpcProblem import CmpcProblem, CmpcSolution
from src.TerminalSets import CertificateReport
from src.calculations.invariance_calculations import terminal_control_input
from src.calculations.nlp_assembly import assemble, evaluate_nlp


def shifted_plan(previous: CmpcSolution, x_next: np.ndarray, problem: CmpcProblem,
                 terminal_input: Optional[float] = None) -> tuple[np.ndarray, float, Optional[str]]:
    """
    Shifted plan (u_1, ..., u_{N-1}, kappa) of the previous solution and the terminal piece it ends in.

    kappa is the terminal-set input at the candidate's penultimate state. Among the handover targets of the
    previous piece the first one the candidate enters is kept, else the one it misses by the least.
    """
    shifted = previous.shifted_inputs()[1:]
    branch = previous.branch

    if branch is None or problem.terminal_sets is None:
        kappa = float(shifted[-1]) if shifted.size else 0.0
        if terminal_input is not None:
            kappa = float(terminal_input)
        return np.append(shifted, kappa), kappa, branch

    penultimate = problem.model.rollout(x_next, shifted)[-1]
    best = None
    for target in problem.terminal_sets.handover[branch]:
        piece = problem.terminal_sets.branch(target)
        kappa = terminal_input
        if kappa is None:
            kappa = terminal_control_input(piece, penultimate, problem.model, problem.model_config)
        slack = piece.min_slack(problem.model.nominal_step(penultimate, kappa))
        if best is None or slack > best[0]:
            best = (slack, float(kappa), target)
        if slack >= -problem.solver_config.tol_feas:
            break

    _, kappa, target = best
    return np.append(shifted, kappa), kappa, target


def _unusable(name: str, previous: Optional[CmpcSolution]) -> Optional[CertificateReport]:
    if previous is None or not previous.feasible:
        return CertificateReport(name, False, -np.inf, details={"reason": "no feasible previous plan"})
    return None


def certify_hard_shift(previous: Optional[CmpcSolution], x_next, problem: CmpcProblem,
                       terminal_input: Optional[float] = None) -> CertificateReport:
    """
    Check that the shifted previous plan (with the performance plan copied from the robust one) satisfies
    every constraint of the hard problem at the measured successor state.
    """
    failure = _unusable("hard_shift", previous)
    if failure is not None:
        return failure

    x_next = np.asarray(x_next, dtype=float)
    plan, kappa, branch = shifted_plan(previous, x_next, problem, terminal_input)
    branch_problem = problem.with_branch(branch)

    z = branch_problem.pack(plan, plan, np.zeros(branch_problem.slack_index.shape[0]))
    evaluation = evaluate_nlp(assemble(branch_problem), z)
    worst_value, worst_tag = evaluation.worst()

    certified = worst_value <= problem.solver_config.tol_feas
    details = {"branch": branch, "previous_branch": previous.branch, "worst_violation": max(worst_value, 0.0),
               "worst_tag": worst_tag, "terminal_input": kappa}
    return CertificateReport("hard_shift", certified, -worst_value, None if certified else x_next, details)


def certify_soft_shift(previous: Optional[CmpcSolution], x_next, problem: CmpcProblem,
                       terminal_input: Optional[float] = None) -> CertificateReport:
    """
    Same candidate as certify_hard_shift for the soft problem, with every slack set to the residual of its
    softened constraint. Passes when the candidate is then feasible.
    """
    failure = _unusable("soft_shift", previous)
    if failure is not None:
        return failure
    if not problem.soft:
        raise ValueError("Invalid problem. certify_soft_shift needs a soft-constrained mode.")

    x_next = np.asarray(x_next, dtype=float)
    plan, kappa, branch = shifted_plan(previous, x_next, problem, terminal_input)
    branch_problem = problem.with_branch(branch)
    nlp = assemble(branch_problem)

    z = branch_problem.pack(plan, plan, np.zeros(branch_problem.slack_index.shape[0]))
    evaluation = evaluate_nlp(nlp, z)
    for spec, value in zip(nlp.constraints, evaluation.values):
        if spec.kind == "performance_dsafe" and spec.index >= 0:
            z[spec.index] = max(z[spec.index], value)

    evaluation = evaluate_nlp(nlp, z)
    worst_value, worst_tag = evaluation.worst()
    slacks = branch_problem.slacks(z)

    certified = worst_value <= problem.solver_config.tol_feas
    details = {"branch": branch, "previous_branch": previous.branch, "worst_violation": max(worst_value, 0.0),
               "worst_tag": worst_tag, "terminal_input": kappa,
               "robust_violation": evaluation.group_violation("robust", "input"),
               "slacks": slacks.tolist(), "slack_l1": float(np.sum(slacks))}
    return CertificateReport("soft_shift", certified, -worst_value, None if certified else x_next, details)
