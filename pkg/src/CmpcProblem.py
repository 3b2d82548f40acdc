import copy
from typing import Optional

import numpy as np

from src.GpModel import GpPosterior
from src.IntervalSet import TightenedMargins
from src.LinearModel import LinearModel, DisturbanceSegment
from src.SafetyParams import SafetyParams
from src.TerminalSets import HalfspaceSet, TerminalSets
from src.calculations.sets_calculations import state_box, tightened_boxes
from src.config import MODES


class CmpcProblem:
    """
    One optimal control problem instance at the current state x_k.

    Decision vector layout (the first input is shared between both horizons):
      rmpc_only:  u_0..u_{N-1}
      gpmpc_only: u_hat_0..u_hat_{N-1}, eps_0..eps_N
      cmpc_hard:  u_0, u_bar_1..u_bar_{N-1}, u_hat_1..u_hat_{N-1}
      cmpc_soft:  as cmpc_hard, then eps_0..eps_N
    """

    def __init__(self, mode: str, x_k, model: LinearModel, disturbance: DisturbanceSegment, safety: SafetyParams,
                 margins: TightenedMargins, terminal_sets: Optional[TerminalSets], gp: Optional[GpPosterior],
                 solver_config, model_config, u_prev: float = 0.0, branch: Optional[str] = None) -> None:
        if mode not in MODES:
            raise ValueError(f"Invalid mode '{mode}'. Must be one of {MODES}.")
        if not 0.0 <= solver_config.P <= 1.0:
            raise ValueError("Invalid P. Must lie in [0, 1].")
        if solver_config.rho <= 0 or min(solver_config.Q, solver_config.R, solver_config.S) <= 0:
            raise ValueError("Invalid weights. rho, Q, R and S must be positive.")
        if margins.N != solver_config.N:
            raise ValueError("Invalid margins. Their horizon must match solver N.")
        if terminal_sets is not None and terminal_sets.N != solver_config.N:
            raise ValueError("Invalid terminal sets. They must be certified for the solver horizon N.")
        if mode != "rmpc_only" and gp is None:
            raise ValueError(f"Invalid problem. Mode '{mode}' needs a GP posterior (the prior is fine).")

        self.mode: str = mode
        self.x_k: np.ndarray = np.asarray(x_k, dtype=float).copy()
        self.model: LinearModel = model
        self.disturbance: DisturbanceSegment = disturbance
        self.safety: SafetyParams = safety
        self.margins: TightenedMargins = margins
        self.terminal_sets: Optional[TerminalSets] = terminal_sets
        self.gp: Optional[GpPosterior] = gp
        self.u_prev: float = float(u_prev)
        self.branch: Optional[str] = None

        self.N: int = solver_config.N
        self.Q: float = solver_config.Q
        self.R: float = solver_config.R
        self.S: float = solver_config.S
        self.P: float = solver_config.P
        self.rho: float = solver_config.rho
        self.solver_config = solver_config

        self.v_ref: float = model_config.v_ref1
        self.v_max: float = model_config.v_max
        self.u1_min: float = model_config.u1_min
        self.u1_max: float = model_config.u1_max
        self.model_config = model_config

        self.velocity_boxes = tightened_boxes(state_box(self.v_max), margins)
        self._build_layout()
        self.branch = self._check_branch(branch)

    @property
    def has_robust(self) -> bool:
        return self.mode != "gpmpc_only"

    @property
    def has_performance(self) -> bool:
        return self.mode != "rmpc_only"

    @property
    def soft(self) -> bool:
        return self.mode in ("gpmpc_only", "cmpc_soft")

    def _build_layout(self) -> None:
        N = self.N
        if self.mode == "rmpc_only":
            self.robust_index = np.arange(N)
            self.performance_index = np.empty(0, dtype=int)
            n_inputs = N
        elif self.mode == "gpmpc_only":
            self.robust_index = np.empty(0, dtype=int)
            self.performance_index = np.arange(N)
            n_inputs = N
        else:
            self.robust_index = np.arange(N)
            self.performance_index = np.concatenate([[0], np.arange(N, 2 * N - 1)])
            n_inputs = 2 * N - 1

        self.n_inputs: int = n_inputs
        self.slack_index = np.arange(n_inputs, n_inputs + N + 1) if self.soft else np.empty(0, dtype=int)
        self.n_vars: int = n_inputs + self.slack_index.shape[0]

    def robust_inputs(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.robust_index]

    def performance_inputs(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.performance_index]

    def slacks(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.slack_index]

    def pack(self, robust=None, performance=None, slacks=None) -> np.ndarray:
        """Build a decision vector; the shared first input is taken from the robust plan when both are given."""
        z = np.zeros(self.n_vars)
        if self.has_performance and performance is not None:
            z[self.performance_index] = performance
        if self.has_robust and robust is not None:
            z[self.robust_index] = robust
        if self.soft and slacks is not None:
            z[self.slack_index] = slacks
        return z

    def variable_names(self) -> list[str]:
        names = [""] * self.n_vars
        for j, index in enumerate(self.performance_index):
            names[index] = f"u_hat_{j}"
        for j, index in enumerate(self.robust_index):
            names[index] = f"u_bar_{j}" if j or not self.has_performance else "u_0"
        for j, index in enumerate(self.slack_index):
            names[index] = f"eps_{j}"
        return names

    def _check_branch(self, branch: Optional[str]) -> Optional[str]:
        if branch is not None and branch not in self.branches():
            raise ValueError(f"Invalid branch '{branch}'. Must be one of {self.branches()}.")
        return branch

    def with_branch(self, branch: Optional[str]) -> "CmpcProblem":
        problem = copy.copy(self)
        problem.branch = self._check_branch(branch)
        return problem

    def branches(self) -> list[Optional[str]]:
        if self.has_robust and self.terminal_sets is not None:
            return self.terminal_sets.names
        return [None]

    def terminal_set(self) -> Optional[HalfspaceSet]:
        """Terminal constraint of the nominal robust plan: the chosen piece as certified for this horizon."""
        if self.branch is None or self.terminal_sets is None:
            return None
        return self.terminal_sets.branch(self.branch)


class CmpcSolution:
    """Result of one controller solve (possibly of one terminal branch only)."""

    def __init__(self, problem: CmpcProblem, z: np.ndarray, status: str, objective: float, kkt_residual: float,
                 violation: float, robust_states: np.ndarray, performance_means: np.ndarray, sigma: np.ndarray,
                 iterations: int = 0, multipliers: Optional[np.ndarray] = None) -> None:
        if status not in ("optimal", "max_iter", "infeasible"):
            raise ValueError("Invalid status. Must be 'optimal', 'max_iter' or 'infeasible'.")

        self.mode: str = problem.mode
        self.branch: Optional[str] = problem.branch
        self.z: np.ndarray = np.asarray(z, dtype=float)
        self.robust_inputs: np.ndarray = problem.robust_inputs(z)
        self.performance_inputs: np.ndarray = problem.performance_inputs(z)
        self.slacks: np.ndarray = problem.slacks(z)
        self.status: str = status
        self.objective: float = float(objective)
        self.kkt_residual: float = float(kkt_residual)
        self.violation: float = float(violation)
        self.robust_states: np.ndarray = robust_states
        self.performance_means: np.ndarray = performance_means
        self.sigma: np.ndarray = sigma
        self.iterations: int = iterations
        self.multipliers: Optional[np.ndarray] = multipliers

        self.solve_time_ms: float = 0.0
        self.branch_gap: Optional[float] = None
        self.trace: list[dict] = []
        self.dump: Optional[dict] = None

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    @property
    def first_input(self) -> float:
        if self.robust_inputs.size:
            return float(self.robust_inputs[0])
        return float(self.performance_inputs[0])

    @property
    def slack_l1(self) -> float:
        return float(np.sum(self.slacks)) if self.slacks.size else 0.0

    def shifted_inputs(self) -> np.ndarray:
        """The plan that a certificate shifts by one step: robust inputs when present, else performance inputs."""
        return self.robust_inputs if self.robust_inputs.size else self.performance_inputs
