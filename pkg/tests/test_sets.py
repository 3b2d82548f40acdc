import numpy as np
import pytest

from src.IntervalSet import IntervalSet
from src.LinearModel import LinearModel, make_state, state_from_positions
from src.calculations.gp_calculations import observe
from src.calculations.sets_calculations import (pontryagin_diff_interval, propagate_disturbance_margins, state_box,
                                                tightened_boxes)
from src.exceptions import EmptySet


def test_true_step_matches_double_integrators(model):
    x = state_from_positions(-200.0, 12.0, -180.0, 10.0)
    x_next = model.true_step(x, 2.0, -0.5)
    Ts = model.Ts
    s1 = -200.0 + Ts * 12.0 + 0.5 * Ts ** 2 * 2.0
    s2 = -180.0 + Ts * 10.0 + 0.5 * Ts ** 2 * -0.5
    np.testing.assert_allclose(x_next, [s2 - s1, (10.0 - 0.5 * Ts) - (12.0 + 2.0 * Ts), s1, 12.0 + 2.0 * Ts])


def test_observe_recovers_applied_disturbance(model, rng):
    for _ in range(50):
        x = make_state(*rng.uniform([-50, -5, -200, 0], [50, 5, 50, 15]))
        u1, u2 = rng.uniform(-3, 5), rng.uniform(-0.5, 0.5)
        assert abs(observe(x, u1, model.true_step(x, u1, u2), model) - u2) <= 1e-12


def test_invalid_inputs_are_rejected():
    with pytest.raises(ValueError):
        LinearModel(0.0)
    with pytest.raises(ValueError):
        make_state(0.0, np.nan, 0.0, 0.0)


def test_margins_grow_with_the_horizon(model, disturbance):
    margins = propagate_disturbance_margins(model, disturbance, 20)
    j = np.arange(21)
    np.testing.assert_allclose(margins.margins[:, 0], 0.015625 * j ** 2)
    np.testing.assert_allclose(margins.margins[:, 1], 0.125 * j)
    assert np.all(margins.margins[:, 2:] == 0.0)


def test_pontryagin_difference_shrinks_box():
    box = IntervalSet([-1.0, -2.0, -np.inf, 0.0], [1.0, 2.0, np.inf, 10.0])
    tight = pontryagin_diff_interval(box, [0.5, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(tight.lower[:2], [-0.5, -1.0])
    np.testing.assert_allclose(tight.upper[:2], [0.5, 1.0])
    assert tight.is_subset_of(box)


def test_pontryagin_difference_errors():
    box = IntervalSet([-1.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0])
    with pytest.raises(EmptySet):
        pontryagin_diff_interval(box, [1.5, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        pontryagin_diff_interval(box, [-0.1, 0.0, 0.0, 0.0])


def test_pontryagin_difference_matches_membership_oracle(rng):
    for _ in range(200):
        lower = rng.uniform(-5, 0, 4)
        upper = lower + rng.uniform(1.0, 5, 4)
        e = rng.uniform(0, 0.5, 4)
        tight = pontryagin_diff_interval(IntervalSet(lower, upper), e)
        for _ in range(20):
            x = rng.uniform(lower - 1, upper + 1)
            corners = [x + signs * e for signs in np.array(np.meshgrid(*[[-1, 1]] * 4)).T.reshape(-1, 4)]
            robust = all(np.all(c >= lower) and np.all(c <= upper) for c in corners)
            assert tight.contains(x) == robust


def test_tightened_velocity_boxes_only_touch_disturbed_axes(margins):
    boxes = tightened_boxes(state_box(15.0), margins)
    assert len(boxes) == margins.N + 1
    for box in boxes:
        assert box.lower[3] == 0.0 and box.upper[3] == 15.0
