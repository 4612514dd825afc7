import numpy as np
import pytest

from delayhjb.core.errors import TrajectoryError, ValueSearchError
from delayhjb.core.histories import History, point_alpha
from delayhjb.core.integrator import (ControlSignal, Selection, cost, index_controls, integrate,
                                      integrate_feedback, integrate_selection, required_eta, rollout)
from delayhjb.core.problem import growth_bounds
from delayhjb.core.solutions import sample_characteristics


def test_constant_control_on_undelayed_lq(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    trajectory, running = integrate(lq_spec, 0.0, [0.0], w, ControlSignal.constant(lq_spec, 0.0, [1.0]))
    np.testing.assert_allclose(trajectory.end_value, [1.0])
    assert running[-1] == pytest.approx(1.0)
    assert cost(lq_spec, trajectory, running) == pytest.approx(2.0)


def test_delayed_term_is_integrated_exactly(linear_spec, unit_point):
    t, z, w = unit_point
    trajectory, running = integrate(linear_spec, t, z, w, ControlSignal.constant(linear_spec, t, [0.0]))
    # x' = 1 on [0, h], then x' = 1 + (t - h)
    np.testing.assert_allclose(trajectory.value_at(0.5), [1.5])
    np.testing.assert_allclose(trajectory.end_value, [2.125])
    assert running[-1] == 0.0


def test_jump_in_history_is_read_from_both_sides(linear_spec):
    grid = linear_spec.grid
    w = History(grid, [[0.0], [1.0], [1.0]], jumps=[1])
    trajectory, _ = integrate(linear_spec, 0.0, [0.0], w, ControlSignal.constant(linear_spec, 0.0, [0.0]))
    # first interval reads w(-h) = 0 and w(-h/2 -) = 0, second reads 1 and 1
    np.testing.assert_allclose(trajectory.value(1), [0.0])
    np.testing.assert_allclose(trajectory.value(2), [0.25])


def test_rollout_rows_match_single_integration(linear_spec, unit_point):
    t, z, w = unit_point
    rng = np.random.default_rng(3)
    sequences = rng.integers(0, len(linear_spec.U), size=(5, 4))
    batch = rollout(linear_spec, t, z, w, index_controls(linear_spec, sequences))
    totals = batch.total_costs(linear_spec)
    for row in range(5):
        u = ControlSignal.from_indices(linear_spec, t, sequences[row])
        trajectory, running = integrate(linear_spec, t, z, w, u)
        np.testing.assert_allclose(batch.trajectory(row).forward, trajectory.forward, rtol=1e-14)
        assert totals[row] == pytest.approx(cost(linear_spec, trajectory, running), rel=1e-12)


def test_partial_rollout_is_not_a_trajectory(linear_spec, unit_point):
    t, z, w = unit_point
    batch = rollout(linear_spec, t, z, w, np.zeros((1, 2, 1)))
    assert batch.end_index == 2
    with pytest.raises(TrajectoryError):
        batch.trajectory(0)
    with pytest.raises(TrajectoryError):
        rollout(linear_spec, t, z, w, np.zeros((1, 5, 1)))


def test_control_signal_shape_and_start(linear_spec, unit_point):
    t, z, w = unit_point
    with pytest.raises(TrajectoryError):
        ControlSignal(linear_spec.grid, 0, np.zeros((3, 1)))
    late = ControlSignal.constant(linear_spec, 0.5, [0.0])
    with pytest.raises(TrajectoryError):
        integrate(linear_spec, t, z, w, late)
    assert not ControlSignal(linear_spec.grid, 0, np.full((4, 1), 2.0)).is_admissible(linear_spec)


def test_feedback_with_constant_policy_matches_open_loop(linear_spec, unit_point):
    t, z, w = unit_point
    control, trajectory, running = integrate_feedback(linear_spec, t, z, w, lambda a, x, y, seg: np.array([-1.0]))
    expected, expected_running = integrate(linear_spec, t, z, w, ControlSignal.constant(linear_spec, t, [-1.0]))
    np.testing.assert_array_equal(trajectory.forward, expected.forward)
    np.testing.assert_array_equal(running, expected_running)
    assert control == ControlSignal.constant(linear_spec, t, [-1.0])


def test_feedback_policy_sees_partial_segment(linear_spec, unit_point):
    t, z, w = unit_point
    seen = []

    def policy(a, x, y, segment):
        seg = segment()
        seen.append((a, seg.samples[-1, 0], float(x[0])))
        return np.array([0.0])

    integrate_feedback(linear_spec, t, z, w, policy)
    assert [a for a, _, _ in seen] == [0, 1, 2, 3]
    for _, last, x in seen:
        assert last == pytest.approx(x)


def test_selection_is_clipped_to_the_radius(linear_spec, unit_point):
    t, z, w = unit_point
    sel = Selection(linear_spec.grid, 0, np.full((4, 1), 100.0))
    trajectory = integrate_selection(linear_spec, t, z, w, sel)
    assert trajectory.clipped_intervals == (0, 1, 2, 3)
    assert required_eta(linear_spec, trajectory) <= 1e-9


def test_radius_scaled_selection_stays_inside(linear_spec, unit_point):
    t, z, w = unit_point
    sel = Selection(linear_spec.grid, 0, np.full((4, 1), -1.0), eta=0.5, scale='radius')
    trajectory = integrate_selection(linear_spec, t, z, w, sel)
    assert trajectory.clipped_intervals == ()
    assert required_eta(linear_spec, trajectory) == pytest.approx(0.5)


def test_controlled_motions_need_no_enlargement(linear_spec, unit_point):
    t, z, w = unit_point
    trajectory, _ = integrate(linear_spec, t, z, w, ControlSignal.constant(linear_spec, t, [1.0]))
    assert required_eta(linear_spec, trajectory) == 0.0


def test_index_controls_range(linear_spec):
    assert index_controls(linear_spec, [[0, 2]]).shape == (1, 2, 1)
    with pytest.raises(ValueSearchError):
        index_controls(linear_spec, [[0, 3]])


def test_family_motions_respect_growth_bounds(linear_spec, unit_point):
    t, z, w = unit_point
    alpha_x, lambda_x = growth_bounds(linear_spec, point_alpha(z, w))
    family = sample_characteristics(linear_spec, t, z, w, count=8)
    for x in family.trajectories:
        assert float(np.max(np.linalg.norm(x.forward, axis=1))) <= alpha_x
        assert x.forward_lipschitz_bound <= lambda_x
