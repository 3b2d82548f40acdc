import numpy as np
import pytest

from src.CmpcProblem import CmpcProblem
from src.GpModel import GpDataset, KernelParams
from src.calculations.certificate_calculations import certify_hard_shift, certify_soft_shift, shifted_plan
from src.calculations.gp_calculations import fit
from src.calculations.sqp_solver import solve
from tests.conftest import certified_sets, short_config


def _problem(mode, x, context_fixtures):
    config, model, disturbance, safety, margins = context_fixtures
    gp = fit(GpDataset(), KernelParams.from_config(config.gp)) if mode != "rmpc_only" else None
    sets = certified_sets(config.solver.N)
    return CmpcProblem(mode, x, model, disturbance, safety, margins, sets, gp, config.solver, config.model)


@pytest.fixture
def context_fixtures(model, disturbance, safety, margins):
    return short_config(N=5), model, disturbance, safety, margins


def _equilibrium(config):
    return np.array([60.0, 2.0, -300.0, config.model.v_ref1])


@pytest.mark.parametrize("mode, certify, name", [
    ("rmpc_only", certify_hard_shift, "hard_shift"),
    ("cmpc_hard", certify_hard_shift, "hard_shift"),
    ("cmpc_soft", certify_soft_shift, "soft_shift"),
])
def test_shifted_plan_is_certified(mode, certify, name, context_fixtures, model):
    config = context_fixtures[0]
    x = _equilibrium(config)
    previous = solve(_problem(mode, x, context_fixtures))
    assert previous.feasible

    x_next = model.true_step(x, previous.first_input, 0.0)
    report = certify(previous, x_next, _problem(mode, x_next, context_fixtures))
    assert report.name == name
    assert report.certified
    assert report.worst_slack >= -config.solver.tol_feas
    assert report.counterexample is None


def test_shifted_plan_appends_terminal_input(context_fixtures, model):
    config = context_fixtures[0]
    x = _equilibrium(config)
    previous = solve(_problem("rmpc_only", x, context_fixtures))
    x_next = model.true_step(x, previous.first_input, 0.0)
    problem = _problem("rmpc_only", x_next, context_fixtures)

    plan, kappa, branch = shifted_plan(previous, x_next, problem, terminal_input=0.25)
    assert plan.shape == (5,)
    assert kappa == 0.25
    assert branch == "behind"
    np.testing.assert_allclose(plan[:-1], previous.robust_inputs[1:])

    plan, kappa, branch = shifted_plan(previous, x_next, problem)
    assert config.model.u1_min <= kappa <= config.model.u1_max
    terminal = model.rollout(x_next, plan)[-1]
    assert problem.terminal_sets.branch(branch).contains(terminal, config.solver.tol_feas)


def test_missing_previous_plan_is_not_certified(context_fixtures, config):
    x = _equilibrium(config)
    report = certify_hard_shift(None, x, _problem("rmpc_only", x, context_fixtures))
    assert not report.certified
    assert report.worst_slack == -np.inf
    assert report.to_dict()["worst_slack"] == "-inf"


def test_soft_certificate_needs_soft_problem(context_fixtures, config):
    x = _equilibrium(config)
    previous = solve(_problem("rmpc_only", x, context_fixtures))
    with pytest.raises(ValueError):
        certify_soft_shift(previous, x, _problem("rmpc_only", x, context_fixtures))
