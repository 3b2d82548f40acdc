import numpy as np

# Absolute tolerance for emptiness tests
EMPTY_TOL = 1e-12


class IntervalSet:
    """Axis-aligned box in the state space; bounds may be infinite."""

    def __init__(self, lower, upper, empty: bool = False) -> None:
        self.lower: np.ndarray = np.asarray(lower, dtype=float).copy()
        self.upper: np.ndarray = np.asarray(upper, dtype=float).copy()

        if self.lower.shape != self.upper.shape:
            raise ValueError("Invalid interval set. Lower and upper bounds must have the same shape.")

        self.empty: bool = bool(empty) or bool(np.any(self.upper - self.lower < -EMPTY_TOL))

    def contains(self, x, tol: float = 0.0) -> bool:
        if self.empty:
            return False
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def is_subset_of(self, other: "IntervalSet") -> bool:
        if self.empty:
            return True
        return bool(np.all(self.lower >= other.lower - EMPTY_TOL) and np.all(self.upper <= other.upper + EMPTY_TOL))

    def __repr__(self) -> str:
        return f"IntervalSet(lower={self.lower}, upper={self.upper}, empty={self.empty})"


class TightenedMargins:
    """Accumulated worst-case offsets e_j (j = 0..N) of the disturbance along each state axis."""

    def __init__(self, margins: np.ndarray) -> None:
        self.margins: np.ndarray = np.asarray(margins, dtype=float)

        assert self.margins.ndim == 2 and self.margins.shape[1] == 4, "Margins must be an (N+1) x 4 array."
        assert np.all(self.margins[0] == 0.0), "The first margin e_0 must be zero."
        assert np.all(np.diff(self.margins, axis=0) >= 0.0), "Margins must be nondecreasing along the horizon."
        assert np.all(self.margins[:, 2:] == 0.0), "The disturbance must never reach s1 or v1."

    @property
    def N(self) -> int:
        return self.margins.shape[0] - 1

    def __getitem__(self, j: int) -> np.ndarray:
        return self.margins[j]
