import time
from typing import Optional

import numpy as np
from loguru import logger

from src.Agent2Policy import Agent2Policy, adversarial_accel, agent2_accel
from src.CmpcProblem import CmpcProblem, CmpcSolution
from src.GpModel import GpDataset, GpPosterior, KernelParams
from src.IntervalSet import TightenedMargins
from src.LinearModel import DS, DV, S1, V1, agent2_position, agent2_velocity, build_model, state_from_positions
from src.SafetyParams import SafetyParams
from src.ScenarioLog import ScenarioLog
from src.TerminalSets import CertificateReport, HalfspaceSet, TerminalSets
from src.calculations.certificate_calculations import certify_hard_shift, certify_soft_shift
from src.calculations.gp_calculations import (agent2_pos_std, fit_auto, observe, posterior_mean, propagate_horizon,
                                              select_inducing)
from src.calculations.invariance_calculations import (build_terminal_sets, certify_pieces, sample_states,
                                                      terminal_pieces)
from src.calculations.kpi_calculations import kpi_merge_time, kpi_result
from src.calculations.safety_calculations import d_safe, d_safe_robust
from src.calculations.sets_calculations import propagate_disturbance_margins, state_box, tightened_boxes
from src.calculations.sqp_solver import solve
from src.config import RootConfig
from src.exceptions import AssumptionViolation, EmptySet, InfeasibleStart

# Absolute tolerance of the learned-model monitor checks
MONITOR_TOL = 1e-9
# Largest admissible fraction of GP variance evaluations clamped at zero
CLAMP_FRACTION_MAX = 0.01


class ControllerContext:
    """Everything a scenario needs that does not change between scenarios of the same configuration."""

    def __init__(self, config: RootConfig, terminal_sets: Optional[TerminalSets] = None) -> None:
        self.config: RootConfig = config
        self.model, self.disturbance = build_model(config.model)
        self.safety: SafetyParams = SafetyParams.from_config(config.safety)
        self.margins: TightenedMargins = propagate_disturbance_margins(self.model, self.disturbance,
                                                                       config.solver.N)
        self.kernel: KernelParams = KernelParams.from_config(config.gp)
        self.terminal_sets: Optional[TerminalSets] = terminal_sets


def build_controller_context(config: RootConfig, with_terminal_sets: bool = True) -> ControllerContext:
    """Prediction model, tightening margins and (certified) terminal sets for a configuration."""
    context = ControllerContext(config)
    if with_terminal_sets:
        context.terminal_sets = build_terminal_sets(context.model, context.disturbance, context.safety,
                                                    config.model, config.terminal, config.verify, config.solver.N)
    return context


def _inducing_trajectory(context: ControllerContext, x: np.ndarray, previous: Optional[CmpcSolution]) -> np.ndarray:
    if previous is not None and previous.performance_means.size:
        return previous.performance_means
    return context.model.rollout(x, np.zeros(context.config.solver.N))


def fit_step_gp(context: ControllerContext, dataset: GpDataset, x: np.ndarray,
                previous: Optional[CmpcSolution]) -> GpPosterior:
    """Posterior used at this step, sparse around the last predicted trajectory once the data outgrows the threshold."""
    gp_config = context.config.gp
    inducing = select_inducing(_inducing_trajectory(context, x, previous), gp_config.n_inducing)
    return fit_auto(dataset, context.kernel, inducing, gp_config.sparse_threshold)


def monitor_learned_model(solution: CmpcSolution, gp: GpPosterior, context: ControllerContext) -> dict:
    """
    Count GP mean evaluations outside the disturbance bounds along the performance plan and, for the contingency
    modes, steps where the performance uncertainty (two std of s2) exceeds the robust tube on delta_s.
    """
    counts = {"evaluations": 0, "outside": 0, "checks": 0, "failures": 0}
    if gp is None or not solution.performance_means.size:
        return counts

    disturbance = context.disturbance
    for x_hat in solution.performance_means[:-1]:
        mean = posterior_mean(gp, x_hat)
        counts["evaluations"] += 1
        if not disturbance.contains(mean, MONITOR_TOL):
            counts["outside"] += 1

    if solution.mode in ("cmpc_hard", "cmpc_soft"):
        for j, sigma in enumerate(solution.sigma):
            counts["checks"] += 1
            if 2.0 * sigma > context.margins[j][DS] + MONITOR_TOL:
                counts["failures"] += 1
    return counts


def _certify(mode: str, previous: Optional[CmpcSolution], x: np.ndarray,
             problem: CmpcProblem) -> Optional[CertificateReport]:
    if mode in ("rmpc_only", "cmpc_hard"):
        return certify_hard_shift(previous, x, problem)
    if mode == "cmpc_soft":
        return certify_soft_shift(previous, x, problem)
    return None


def run_scenario(config: RootConfig, context: Optional[ControllerContext] = None,
                 dump_dir: Optional[str] = None) -> ScenarioLog:
    """
    Closed-loop lane merge from the configured start: solve, apply the first input, step the plant with
    Agent 2's policy (or an adversarial one) and grow the GP dataset with the observed acceleration.

    Raises InfeasibleStart (carrying the partial log) when the first solve has no feasible plan.
    """
    scenario = config.scenario
    model_config, solver_config = config.model, config.solver
    mode = scenario.mode

    if context is None:
        context = build_controller_context(config, with_terminal_sets=mode != "gpmpc_only")
    model, disturbance = context.model, context.disturbance
    terminal_sets = context.terminal_sets if mode != "gpmpc_only" else None

    log = ScenarioLog(mode, scenario.v1_0, scenario.v2_0, model_config.Ts, scenario.disturbance_policy,
                      scenario.seed)
    policy = Agent2Policy.from_config(scenario)
    rng = np.random.default_rng(scenario.seed)
    dataset = GpDataset(config.gp.capacity)

    x = state_from_positions(scenario.s1_0, scenario.v1_0, scenario.s2_0, scenario.v2_0)
    previous: Optional[CmpcSolution] = None
    stale = 0
    u_prev = 0.0
    start = time.perf_counter()

    for k in range(scenario.steps):
        gp = fit_step_gp(context, dataset, x, previous) if mode != "rmpc_only" else None
        problem = CmpcProblem(mode, x, model, disturbance, context.safety, context.margins, terminal_sets, gp,
                              solver_config, model_config, u_prev)

        certificate = _certify(mode, previous, x, problem) if k > 0 and stale == 0 else None
        solution = solve(problem, previous, dump_dir)

        counts = monitor_learned_model(solution, gp, context)
        log.gp_mean_evaluations += counts["evaluations"]
        log.gp_mean_outside += counts["outside"]
        log.containment_checks += counts["checks"]
        log.containment_failures += counts["failures"]
        if gp is not None:
            log.variance_clamps += gp.variance_clamps
            log.psd_projections += gp.psd_projections

        if mode == "cmpc_hard" and scenario.enforce_assumption2 and log.gp_mean_outside:
            raise AssumptionViolation(f"GP mean left [{disturbance.u2_min}, {disturbance.u2_max}] at step {k}; "
                                      "the hard contingency variant cannot continue.")

        if solution.feasible:
            stale = 0
            previous = solution
            u1 = solution.first_input
        elif k == 0:
            log.infeasible_start = True
            log.final_state = x
            logger.warning(f"Scenario '{log.name}' has no feasible plan at its initial state.")
            raise InfeasibleStart(f"Scenario '{log.name}' is infeasible at k = 0.", log)
        else:
            stale += 1
            fallback = previous.shifted_inputs()
            u1 = float(fallback[min(stale, fallback.shape[0] - 1)])
            logger.debug(f"Step {k}: solver {solution.status}; applying input {stale} of the last feasible plan.")

        v2 = agent2_velocity(x)
        if scenario.disturbance_policy is None:
            u2 = agent2_accel(x, v2, policy, model, disturbance, model_config)
        else:
            u2 = adversarial_accel(x, v2, scenario.disturbance_policy, rng, model, disturbance, model_config)

        x_next = model.true_step(x, u1, u2)
        y = observe(x, u1, x_next, model)

        log.append_step({
            "k": k, "t": k * model.Ts, "delta_s": x[DS], "delta_v": x[DV], "s1": x[S1], "v1": x[V1],
            "s2": agent2_position(x), "v2": v2, "u1": u1, "u2": u2, "status": solution.status,
            "objective": solution.objective, "slack_l1": solution.slack_l1, "branch": solution.branch,
            "branch_gap": solution.branch_gap, "d_safe": d_safe(x[S1], x[DS], x[V1], context.safety),
            "certificate": certificate.name if certificate else None,
            "certificate_passed": certificate.certified if certificate else None,
            "certificate_slack": certificate.worst_slack if certificate else None,
            "solve_time_ms": solution.solve_time_ms, "n_data": dataset.n_D, "stale_offset": stale,
            "gp_mean_outside": counts["outside"], "containment_failures": counts["failures"]})

        dataset.append(x, y)
        u_prev = u1
        x = x_next

    log.final_state = x
    log.merge_time = kpi_merge_time(log)
    log.merge_result = kpi_result(log)

    elapsed_ms = (time.perf_counter() - start) * 1000
    logger.info(f"Scenario '{log.name}' finished {log.n_steps} steps in {elapsed_ms:.1f} ms: "
                f"merge {log.merge_result} at {log.merge_time} s.")
    return log


def run_adversarial(config: RootConfig, disturbance_policy: str, context: Optional[ControllerContext] = None,
                    dump_dir: Optional[str] = None) -> ScenarioLog:
    """Same closed loop with Agent 2 replaced by extreme accelerations; used to stress the certificates."""
    scenario = type(config.scenario).model_validate({**config.scenario.model_dump(),
                                                     "disturbance_policy": disturbance_policy})
    return run_scenario(config.model_copy(update={"scenario": scenario}), context, dump_dir)


def scenario_config(config: RootConfig, mode: str, v1_0: float, v2_0: float) -> RootConfig:
    """Copy of the configuration with another controller mode and initial speeds (meters/second)."""
    scenario = config.scenario.model_dump()
    scenario.update({"mode": mode, "v1_0": v1_0, "v2_0": v2_0})
    return config.model_copy(update={"scenario": type(config.scenario).model_validate(scenario)})


def _monitor_states(config: RootConfig) -> np.ndarray:
    states = sample_states(HalfspaceSet("grid", np.empty((0, 4)), np.empty(0)), config.model, config.verify)
    stride = max(1, states.shape[0] // config.verify.monitor_states)
    return states[::stride]


def learned_model_report(context: ControllerContext, dataset: GpDataset) -> dict:
    """
    Fraction of GP mean evaluations inside the disturbance bounds and of performance steps whose uncertainty
    stays inside the robust tube, over zero-input predictions from a grid of states.
    """
    config = context.config
    states = _monitor_states(config)
    inducing = select_inducing(dataset.inputs(), config.gp.n_inducing) if dataset.n_D else np.empty((0, 4))
    gp = fit_auto(dataset, context.kernel, inducing, config.gp.sparse_threshold)

    evaluations = outside = checks = failures = 0
    zeros = np.zeros(config.solver.N)
    for x in states:
        means, joints = propagate_horizon(gp, x, zeros, context.model)
        for j, (x_hat, joint) in enumerate(zip(means, joints)):
            if j < config.solver.N:
                evaluations += 1
                outside += not context.disturbance.contains(posterior_mean(gp, x_hat), MONITOR_TOL)
            checks += 1
            failures += 2.0 * agent2_pos_std(joint) > context.margins[j][DS] + MONITOR_TOL

    return {"states": int(states.shape[0]), "gp_mode": gp.mode, "n_data": dataset.n_D,
            "mean_inside_fraction": 1.0 - outside / evaluations if evaluations else 1.0,
            "containment_fraction": 1.0 - failures / checks if checks else 1.0,
            "variance_clamps": gp.variance_clamps, "variance_evaluations": gp.variance_evaluations,
            "clamp_fraction": gp.clamp_fraction, "psd_projections": gp.psd_projections}


def clamp_report(monitor: dict) -> CertificateReport:
    """Fails when more than CLAMP_FRACTION_MAX of the GP variance evaluations had to be clamped at zero."""
    fraction = monitor["clamp_fraction"]
    return CertificateReport("variance_clamps", fraction <= CLAMP_FRACTION_MAX, CLAMP_FRACTION_MAX - fraction,
                             details={"clamps": monitor["variance_clamps"],
                                      "evaluations": monitor["variance_evaluations"]})


def _omega_safety(omega: HalfspaceSet, context: ControllerContext) -> CertificateReport:
    """
    Largest robust safety-function value (tube e_N) over sampled members of a terminal set; it must stay
    non-positive so the terminal safety row holds wherever the set does.
    """
    config = context.config
    e_N = context.margins[context.margins.N][DS]
    states = sample_states(omega, config.model, config.verify)
    values = np.array([d_safe_robust(x[S1], x[DS], x[V1], e_N, context.safety) for x in states])
    index = int(np.argmax(values)) if values.size else None
    worst = float(values[index]) if values.size else -np.inf
    certified = worst <= config.solver.tol_feas
    return CertificateReport(f"{omega.name}_safe", certified, -worst,
                             None if certified or index is None else states[index],
                             {"states_checked": int(states.shape[0]), "tube": e_N})


def _tightening_report(context: ControllerContext) -> CertificateReport:
    try:
        boxes = tightened_boxes(state_box(context.config.model.v_max), context.margins)
    except EmptySet as e:
        return CertificateReport("tightening", False, -np.inf, details={"reason": str(e)})
    nested = all(inner.is_subset_of(outer) for outer, inner in zip(boxes[:-1], boxes[1:]))
    slack = float(boxes[-1].upper[V1] - boxes[-1].lower[V1])
    return CertificateReport("tightening", nested, slack,
                             details={"final_margin": context.margins[context.margins.N].tolist()})


def run_verification(config: RootConfig) -> tuple[list[CertificateReport], dict]:
    """
    Certify the configured terminal pieces for the solver horizon as they are (no inflation), check they are
    disjoint and inside the robust safe set, check the constraint tightening and the learned model.
    """
    start = time.perf_counter()
    context = ControllerContext(config)
    terminal_config = config.terminal
    N = config.solver.N
    pieces, handover = terminal_pieces(context.safety, context.model, context.disturbance, config.model,
                                       terminal_config, N, terminal_config.r1, terminal_config.r2,
                                       terminal_config.kappa1, terminal_config.dv1)

    reports, disjoint = certify_pieces(pieces, handover, context.model, context.disturbance, config.model,
                                       config.verify, N)
    reports.append(CertificateReport("disjointness", disjoint, np.inf if disjoint else 0.0))
    reports += [_omega_safety(piece, context) for piece in pieces.values()]
    reports.append(_tightening_report(context))

    if config.verify.dataset_csv:
        dataset = GpDataset.load_dataset_from_csv(config.verify.dataset_csv, config.gp.capacity)
    else:
        dataset = GpDataset(config.gp.capacity)
    monitor = learned_model_report(context, dataset)
    reports.append(clamp_report(monitor))

    elapsed_ms = (time.perf_counter() - start) * 1000
    logger.info(f"Verification finished in {elapsed_ms:.1f} ms: "
                f"{sum(report.certified for report in reports)}/{len(reports)} checks passed.")
    return reports, monitor
