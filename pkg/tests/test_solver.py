import itertools

import numpy as np
import pytest

from src.CmpcProblem import CmpcProblem
from src.GpModel import GpDataset, KernelParams
from src.LinearModel import DS, S1, V1, build_model
from src.SafetyParams import SafetyParams
from src.calculations.active_set_qp import solve_qp
from src.calculations.cost_calculations import (closed_loop_stage_costs, stage_cost, stage_cost_residuals,
                                                total_cost, velocity_profile)
from src.calculations.gp_calculations import fit
from src.calculations.nlp_assembly import assemble, evaluate_nlp
from src.calculations.sets_calculations import propagate_disturbance_margins
from src.calculations import sqp_solver
from src.calculations.safety_calculations import d_safe_gp
from src.calculations.sqp_solver import solve
from src.config import RootConfig
from tests.conftest import certified_sets


def _problem(mode, x, N=5, gp_dataset=None, **solver):
    config = RootConfig.model_validate({"solver": {"N": N, **solver}})
    model, disturbance = build_model(config.model)
    margins = propagate_disturbance_margins(model, disturbance, N)
    gp = None
    if mode != "rmpc_only":
        dataset = gp_dataset if gp_dataset is not None else GpDataset()
        gp = fit(dataset, KernelParams.from_config(config.gp))
    return CmpcProblem(mode, x, model, disturbance, SafetyParams.from_config(config.safety), margins,
                       certified_sets(N), gp, config.solver, config.model)


def _equilibrium(config):
    return np.array([60.0, 2.0, -300.0, config.model.v_ref1])


def test_velocity_profile_and_cost_residuals():
    np.testing.assert_allclose(velocity_profile(10.0, [1.0, -2.0], 0.25), [10.0, 10.25, 9.75])
    residuals, jacobian = stage_cost_residuals(10.0, [1.0, -2.0], 0.5, 12.0, 0.25, 10.0, 1.0, 10.0)
    expected = stage_cost(10.0, [1.0, -2.0], 0.5, 12.0, 0.25, 10.0, 1.0, 10.0)
    assert float(residuals @ residuals) == pytest.approx(expected)
    h = 1e-6
    for i in range(2):
        step = np.eye(2)[i] * h
        plus, _ = stage_cost_residuals(10.0, np.array([1.0, -2.0]) + step, 0.5, 12.0, 0.25, 10.0, 1.0, 10.0)
        minus, _ = stage_cost_residuals(10.0, np.array([1.0, -2.0]) - step, 0.5, 12.0, 0.25, 10.0, 1.0, 10.0)
        np.testing.assert_allclose(jacobian[:, i], (plus - minus) / (2 * h), atol=1e-7)


def test_closed_loop_stage_cost_examples():
    np.testing.assert_allclose(closed_loop_stage_costs([5.0, 5.0], [0.0, 0.0], 5.0, 10.0, 1.0, 10.0), [0.0, 0.0])
    np.testing.assert_allclose(closed_loop_stage_costs([4.0, 4.0, 4.0], [0.0] * 3, 5.0, 10.0, 1.0, 10.0), [10.0] * 3)
    # u_{-1} = 0 makes the first input count in the smoothness term
    assert closed_loop_stage_costs([5.0], [1.0], 5.0, 10.0, 1.0, 10.0)[0] == pytest.approx(11.0)
    with pytest.raises(ValueError):
        total_cost(1.0, 1.0, [], 1.5, 1.0)


def test_problem_layout():
    problem = _problem("cmpc_soft", np.array([20.0, -1.0, -200.0, 12.0]), N=20)
    assert problem.n_inputs == 39 and problem.n_vars == 60
    names = problem.variable_names()
    assert names[0] == "u_0" and names[1] == "u_bar_1" and names[20] == "u_hat_1" and names[-1] == "eps_20"
    z = problem.pack(np.arange(20.0), -np.arange(20.0), np.ones(21))
    assert problem.robust_inputs(z)[0] == problem.performance_inputs(z)[0] == 0.0
    np.testing.assert_array_equal(problem.performance_inputs(z)[1:], -np.arange(1.0, 20.0))


def test_problem_validation(config, model, disturbance, safety, margins):
    x = np.array([20.0, -1.0, -200.0, 12.0])
    sets = certified_sets(5)
    with pytest.raises(ValueError):
        CmpcProblem("cmpc_soft", x, model, disturbance, safety, margins, sets, None,
                    RootConfig.model_validate({"solver": {"N": 5}}).solver, config.model)
    with pytest.raises(ValueError):
        CmpcProblem("rmpc_only", x, model, disturbance, safety, margins, sets, None, config.solver,
                    config.model)
    with pytest.raises(ValueError, match="terminal sets"):
        CmpcProblem("rmpc_only", x, model, disturbance, safety, margins, certified_sets(2), None,
                    RootConfig.model_validate({"solver": {"N": 5}}).solver, config.model)
    with pytest.raises(ValueError):
        _problem("robust", x)


def test_qp_with_one_active_constraint():
    result = solve_qp(np.eye(2), np.array([-1.0, -1.0]), np.array([[1.0, 1.0]]), np.array([1.0]))
    assert result.status == "optimal"
    np.testing.assert_allclose(result.p, [0.5, 0.5])
    np.testing.assert_allclose(result.multipliers, [0.5])
    assert not result.relaxed


def test_qp_relaxes_inconsistent_constraints():
    result = solve_qp(np.eye(1), np.zeros(1), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert result.relaxed
    assert np.all(np.array([[1.0], [-1.0]]) @ result.p <= np.array([-1.0, -1.0]) + result.relaxation + 1e-9)


def test_nlp_gradients_match_central_differences(small_dataset, rng):
    problem = _problem("cmpc_soft", np.array([20.0, -1.0, -60.0, 12.0]), gp_dataset=small_dataset)
    nlp = assemble(problem)
    h = 1e-6
    for _ in range(10):
        z = np.concatenate([rng.uniform(-3, 5, problem.n_inputs), rng.uniform(0, 1, problem.N + 1)])
        evaluation = evaluate_nlp(nlp, z)
        numeric_gradient = np.zeros(problem.n_vars)
        numeric_jacobian = np.zeros_like(evaluation.jacobian)
        for i in range(problem.n_vars):
            step = np.eye(problem.n_vars)[i] * h
            plus = evaluate_nlp(nlp, z + step, sigma=evaluation.sigma)
            minus = evaluate_nlp(nlp, z - step, sigma=evaluation.sigma)
            numeric_gradient[i] = (plus.objective - minus.objective) / (2 * h)
            numeric_jacobian[:, i] = (plus.values - minus.values) / (2 * h)
        np.testing.assert_allclose(evaluation.gradient, numeric_gradient, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(evaluation.jacobian, numeric_jacobian, rtol=1e-4, atol=1e-6)


def test_objective_is_exactly_quadratic(rng):
    problem = _problem("cmpc_hard", np.array([20.0, -1.0, -60.0, 12.0]))
    nlp = assemble(problem)
    z = rng.uniform(-3, 5, problem.n_vars)
    d = rng.uniform(-1, 1, problem.n_vars)
    base = evaluate_nlp(nlp, z)
    predicted = base.objective + base.gradient @ d + 0.5 * d @ base.hessian @ d
    assert evaluate_nlp(nlp, z + d).objective == pytest.approx(predicted, rel=1e-10)


def test_equilibrium_keeps_zero_input(config):
    solution = solve(_problem("rmpc_only", _equilibrium(config)))
    assert solution.status == "optimal"
    assert solution.branch == "behind"
    assert abs(solution.first_input) <= 1e-8
    assert solution.objective == pytest.approx(0.0, abs=1e-10)


def test_short_horizon_matches_input_grid(config):
    x = np.array([200.0, 0.0, -300.0, config.model.v_ref1 - 2.0])
    problem = _problem("rmpc_only", x, N=2)
    solution = solve(problem)
    assert solution.status == "optimal"

    weights = (config.model.Ts, config.solver.Q, config.solver.R, config.solver.S)
    grid = np.linspace(config.model.u1_min, config.model.u1_max, 101)
    best = min(stage_cost(x[3], pair, 0.0, config.model.v_ref1, *weights)
               for pair in itertools.product(grid, grid))
    assert solution.objective <= best + 1e-9
    assert solution.objective >= best - 0.1
    assert solution.objective == pytest.approx(stage_cost(x[3], solution.robust_inputs, 0.0, config.model.v_ref1,
                                                          *weights))


def test_full_weight_on_robust_plan_matches_robust_controller(config):
    x = np.array([200.0, 0.0, -300.0, config.model.v_ref1 - 2.0])
    robust = solve(_problem("rmpc_only", x, N=2))
    contingency = solve(_problem("cmpc_hard", x, N=2, P=1.0))
    assert contingency.feasible
    assert contingency.first_input == pytest.approx(robust.first_input, abs=1e-6)


def test_soft_problem_needs_no_slack_when_hard_is_feasible(config):
    x = np.array([200.0, 0.0, -300.0, config.model.v_ref1 - 2.0])
    solution = solve(_problem("cmpc_soft", x, N=2))
    assert solution.feasible
    assert solution.slack_l1 <= 1e-6


def test_infeasible_start_is_reported():
    solution = solve(_problem("rmpc_only", np.array([0.0, 0.0, -10.0, 10.0])))
    assert solution.status == "infeasible"
    assert not solution.feasible


def test_performance_constraint_imposes_both_sides(small_dataset):
    problem = _problem("cmpc_soft", np.array([20.0, -1.0, -60.0, 12.0]), gp_dataset=small_dataset)
    nlp = assemble(problem)
    specs = [spec for spec in nlp.constraints if spec.kind == "performance_dsafe"]
    assert len(specs) == 2 * (problem.N + 1)
    for j in range(problem.N + 1):
        at_step = [spec for spec in specs if spec.step == j]
        assert {spec.side for spec in at_step} == {"lower", "upper"}
        assert len({spec.index for spec in at_step}) == 1

    z = problem.pack(np.zeros(problem.N), np.zeros(problem.N), np.zeros(problem.N + 1))
    evaluation = evaluate_nlp(nlp, z)
    safety = problem.safety
    for spec, value in zip(nlp.constraints, evaluation.values):
        if spec.kind != "performance_dsafe":
            continue
        mean = evaluation.performance_means[spec.step]
        expected = d_safe_gp(mean[S1], mean[DS], mean[V1], evaluation.sigma[spec.step], spec.side, safety)
        assert value == pytest.approx(expected)


def test_small_step_without_stationarity_is_not_optimal(config, monkeypatch):
    monkeypatch.setattr(sqp_solver, "_kkt_residual", lambda evaluation, multipliers: 1.0)
    solution = solve(_problem("rmpc_only", _equilibrium(config), max_iter=5))
    assert solution.status == "max_iter"
    assert solution.kkt_residual == 1.0
    assert solution.feasible


@pytest.mark.slow
def test_slack_never_grows_with_the_penalty(config):
    x = np.array([12.0, 0.0, 10.0, config.model.v_ref1 - 3.0])
    slack = []
    for rho in (1.0, 10.0, 100.0, 1000.0, 10000.0):
        solution = solve(_problem("cmpc_soft", x, rho=rho))
        assert solution.feasible
        slack.append(solution.slack_l1)
    assert all(later <= earlier + 1e-5 for earlier, later in zip(slack, slack[1:]))
