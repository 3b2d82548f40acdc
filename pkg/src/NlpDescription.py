from typing import Optional

import numpy as np

# Constraint kinds in assembly order
CONSTRAINT_KINDS = ("input_lb", "input_ub", "slack_nonneg", "robust_velocity_lb", "robust_velocity_ub",
                    "robust_dsafe", "terminal", "performance_velocity_lb", "performance_velocity_ub",
                    "performance_dsafe")


class ConstraintSpec:
    """Static description of one scalar constraint c(z) <= 0: kind, horizon step, auxiliary index and side."""

    def __init__(self, kind: str, step: int, index: int = -1, side: Optional[str] = None) -> None:
        if kind not in CONSTRAINT_KINDS:
            raise ValueError(f"Invalid constraint kind '{kind}'. Must be one of {CONSTRAINT_KINDS}.")
        self.kind: str = kind
        self.step: int = step
        self.index: int = index
        self.side: Optional[str] = side

    @property
    def group(self) -> str:
        if self.kind.startswith("robust") or self.kind == "terminal":
            return "robust"
        if self.kind.startswith("performance"):
            return "performance"
        return "input" if self.kind.startswith("input") else "slack"


class NlpDescription:
    """Single-shooting NLP of one problem branch: variable layout plus the ordered constraint list."""

    def __init__(self, problem, constraints: list[ConstraintSpec]) -> None:
        self.problem = problem
        self.constraints: list[ConstraintSpec] = constraints
        self.n_vars: int = problem.n_vars
        self.variable_names: list[str] = problem.variable_names()

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def layout(self) -> dict:
        return {"mode": self.problem.mode, "branch": self.problem.branch, "n_vars": self.n_vars,
                "variables": self.variable_names, "n_constraints": self.n_constraints}


class ConstraintEvaluation:
    """Value (<= 0 means satisfied), gradient over the decision variables and a tag of one constraint."""

    def __init__(self, value: float, gradient: np.ndarray, which: str) -> None:
        self.value: float = float(value)
        self.gradient: np.ndarray = gradient
        self.which: str = which


class NlpEvaluation:
    """Objective, constraints and rollouts of the NLP at one decision vector."""

    def __init__(self, objective: float, gradient: np.ndarray, hessian: np.ndarray,
                 constraints: list[ConstraintEvaluation], robust_states: np.ndarray,
                 performance_means: np.ndarray, sigma: np.ndarray, groups: list[str],
                 cost_robust: Optional[float] = None, cost_performance: Optional[float] = None) -> None:
        self.objective: float = float(objective)
        self.gradient: np.ndarray = gradient
        self.hessian: np.ndarray = hessian
        self.constraints: list[ConstraintEvaluation] = constraints
        self.robust_states: np.ndarray = robust_states
        self.performance_means: np.ndarray = performance_means
        self.sigma: np.ndarray = sigma
        self.groups: list[str] = groups
        self.cost_robust: Optional[float] = cost_robust
        self.cost_performance: Optional[float] = cost_performance

        self.values: np.ndarray = np.array([item.value for item in constraints])
        self.jacobian: np.ndarray = (np.array([item.gradient for item in constraints]) if constraints
                                     else np.zeros((0, gradient.shape[0])))
        self.tags: list[str] = [item.which for item in constraints]

    @property
    def violation(self) -> float:
        """Infinity norm of the constraint violation."""
        if self.values.size == 0:
            return 0.0
        return float(max(0.0, self.values.max()))

    def group_violation(self, *groups: str) -> float:
        mask = np.array([group in groups for group in self.groups], dtype=bool)
        if not mask.any():
            return 0.0
        return float(max(0.0, self.values[mask].max()))

    def worst(self) -> tuple[float, str]:
        if self.values.size == 0:
            return -np.inf, ""
        index = int(np.argmax(self.values))
        return float(self.values[index]), self.tags[index]
