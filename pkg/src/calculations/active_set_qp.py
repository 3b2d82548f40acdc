"""
Dense primal active-set method for the convex QP subproblems

    min 1/2 p'Hp + g'p   s.t.   A p <= b

with H positive definite. An infeasible constraint set is handled by a minimum-violation phase-1 LP whose
optimal violations relax the right-hand side.
"""
import numpy as np
from loguru import logger
from scipy.optimize import linprog

# Tolerances of the active-set iteration
FEAS_TOL = 1e-10
STEP_TOL = 1e-12
MULTIPLIER_TOL = 1e-12


class QpResult:
    def __init__(self, p: np.ndarray, multipliers: np.ndarray, status: str, iterations: int,
                 relaxation: np.ndarray) -> None:
        self.p: np.ndarray = p
        self.multipliers: np.ndarray = multipliers
        self.status: str = status
        self.iterations: int = iterations
        self.relaxation: np.ndarray = relaxation

    @property
    def relaxed(self) -> bool:
        return bool(np.any(self.relaxation > 0))


def _solve_kkt(H: np.ndarray, A_work: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n, m = H.shape[0], A_work.shape[0]
    kkt = np.block([[H, A_work.T], [A_work, np.zeros((m, m))]])
    full_rhs = np.concatenate([rhs, np.zeros(m)])
    try:
        return np.linalg.solve(kkt, full_rhs)
    except np.linalg.LinAlgError:
        # Degenerate working set
        return np.linalg.lstsq(kkt, full_rhs, rcond=None)[0]


def phase_one(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Point minimising the total violation sum(s) of A p <= b + s, s >= 0; returns (p, s)."""
    m, n = A.shape
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    A_ub = np.hstack([A, -np.eye(m)])
    bounds = [(None, None)] * n + [(0.0, None)] * m
    result = linprog(cost, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if result.status != 0:
        logger.warning(f"Phase-1 LP ended with status {result.status}: {result.message}")
        return np.zeros(n), np.maximum(-b, 0.0)
    return result.x[:n], np.maximum(result.x[n:], 0.0)


def solve_qp(H: np.ndarray, g: np.ndarray, A: np.ndarray, b: np.ndarray, max_iter: int = 500) -> QpResult:
    n = H.shape[0]
    m = A.shape[0]
    relaxation = np.zeros(m)

    p = np.zeros(n)
    if m and np.any(A @ p - b > FEAS_TOL):
        p, relaxation = phase_one(A, b)
        relaxation[relaxation <= FEAS_TOL] = 0.0
        b = b + relaxation

    working: list[int] = []
    multipliers = np.zeros(m)

    for iteration in range(1, max_iter + 1):
        A_work = A[working] if working else np.zeros((0, n))
        solution = _solve_kkt(H, A_work, -(H @ p + g))
        d = solution[:n]
        lam_work = solution[n:]

        if np.max(np.abs(d), initial=0.0) <= STEP_TOL * max(1.0, np.max(np.abs(p), initial=0.0)):
            multipliers = np.zeros(m)
            multipliers[working] = lam_work
            if not working or lam_work.min() >= -MULTIPLIER_TOL:
                multipliers = np.maximum(multipliers, 0.0)
                return QpResult(p, multipliers, "optimal", iteration, relaxation)
            working.pop(int(np.argmin(lam_work)))
            continue

        Ad = A @ d
        candidates = Ad > STEP_TOL
        candidates[working] = False
        blocking = None
        step = 1.0
        if candidates.any():
            ratios = np.full(m, np.inf)
            ratios[candidates] = (b[candidates] - A[candidates] @ p) / Ad[candidates]
            index = int(np.argmin(ratios))
            if ratios[index] < 1.0:
                step = max(float(ratios[index]), 0.0)
                blocking = index

        p = p + step * d
        if blocking is not None:
            working.append(blocking)

    logger.warning(f"Active-set QP reached {max_iter} iterations without converging.")
    multipliers = np.zeros(m)
    if working:
        A_work = A[working]
        lam_work = _solve_kkt(H, A_work, -(H @ p + g))[n:]
        multipliers[working] = np.maximum(lam_work, 0.0)
    return QpResult(p, multipliers, "max_iter", max_iter, relaxation)
