import numpy as np

from src.IntervalSet import IntervalSet, TightenedMargins, EMPTY_TOL
from src.LinearModel import LinearModel, DisturbanceSegment
from src.exceptions import EmptySet


def propagate_disturbance_margins(model: LinearModel, disturbance: DisturbanceSegment, N: int) -> TightenedMargins:
    """
    Per-axis support of the Minkowski sum of the segments A^i W, i < j, for j = 0..N.

    e_j[axis] = sum_{i<j} max_{u2 in [u2_min, u2_max]} |(A^i B2)[axis] * u2|
    """
    if N < 1:
        raise ValueError("Invalid horizon. N must be at least 1.")

    margins = np.zeros((N + 1, 4))
    direction = disturbance.direction
    power = np.eye(4)
    for i in range(N):
        column = np.abs(power @ direction) * disturbance.magnitude
        margins[i + 1] = margins[i] + column
        power = model.A @ power

    return TightenedMargins(margins)


def pontryagin_diff_interval(box: IntervalSet, e) -> IntervalSet:
    """Shrink every axis of the box by the nonnegative offset e; raises EmptySet when an axis crosses."""
    e = np.asarray(e, dtype=float)
    if np.any(e < 0):
        raise ValueError("Invalid margin. Offsets must be nonnegative.")

    lower = box.lower + e
    upper = box.upper - e
    if box.empty or np.any(upper - lower < -EMPTY_TOL):
        raise EmptySet(f"Pontryagin difference is empty: lower={lower}, upper={upper}.")

    return IntervalSet(lower, upper)


def state_box(v_max: float) -> IntervalSet:
    """The interval part of the state constraints: only the Agent-1 speed is boxed."""
    return IntervalSet([-np.inf, -np.inf, -np.inf, 0.0], [np.inf, np.inf, np.inf, v_max])


def tightened_boxes(box: IntervalSet, margins: TightenedMargins) -> list[IntervalSet]:
    """X_j tightened by e_j for j = 0..N; e_0 = 0 leaves the first box untouched."""
    return [pontryagin_diff_interval(box, margins[j]) for j in range(margins.N + 1)]
