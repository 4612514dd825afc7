import numpy as np
import pytest

from delayhjb.core.histories import History
from delayhjb.core.integrator import ControlSignal, integrate
from delayhjb.core.oracles import (quadrature_cost_oracle, semi_lagrangian_oracle, undelayed_box_lq_derivs,
                                   undelayed_box_lq_value)


@pytest.mark.parametrize('T, z, expected', [(1.0, 1.0, 0.5), (0.0, 2.0, 4.0), (1.0, 3.0, 5.0), (0.5, -0.3, 0.06)])
def test_closed_form_values(T, z, expected):
    assert undelayed_box_lq_value(T, z) == pytest.approx(expected)


def test_closed_form_derivatives_match_differences():
    for T, z in [(1.0, 0.5), (0.5, 2.5), (0.25, -3.0)]:
        dt, dz = undelayed_box_lq_derivs(T, z)
        h = 1e-6
        # t is the current time, so a later t means less time to go
        assert dt == pytest.approx((undelayed_box_lq_value(T - h, z) - undelayed_box_lq_value(T + h, z)) / (2 * h),
                                   rel=1e-5)
        assert dz == pytest.approx((undelayed_box_lq_value(T, z + h) - undelayed_box_lq_value(T, z - h)) / (2 * h),
                                   rel=1e-5)


def test_semi_lagrangian_tracks_closed_form():
    z_grid = np.linspace(-4.0, 4.0, 401)
    controls = np.linspace(-1.0, 1.0, 9)
    oracle = semi_lagrangian_oracle(1.0, z_grid, 200, controls)
    inside = np.abs(z_grid) <= 1.0
    exact = np.array([undelayed_box_lq_value(1.0, z) for z in z_grid[inside]])
    assert np.max(np.abs(oracle[inside] - exact)) <= 5e-2


def test_semi_lagrangian_with_no_steps_left_is_terminal_cost():
    z_grid = np.linspace(-1.0, 1.0, 5)
    np.testing.assert_allclose(semi_lagrangian_oracle(0.5, z_grid, 1, [0.0]), z_grid ** 2)


def test_quadrature_oracle_matches_running_cost(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    u = ControlSignal.constant(lq_spec, 0.0, [0.5])
    assert quadrature_cost_oracle(lq_spec, 0.0, [0.0], w, u) == pytest.approx(0.25)
    _, running = integrate(lq_spec, 0.0, [0.0], w, u)
    assert running[-1] == pytest.approx(0.25)


def test_quadrature_oracle_on_delayed_desk(linear_spec, unit_point):
    t, z, w = unit_point
    u = ControlSignal(linear_spec.grid, 0, [[1.0], [0.0], [-1.0], [0.0]])
    _, running = integrate(linear_spec, t, z, w, u)
    assert quadrature_cost_oracle(linear_spec, t, z, w, u, factor=4) == pytest.approx(running[-1])
