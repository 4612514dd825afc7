import itertools

import numpy as np
import pytest

from conftest import linear_desk_dict
from delayhjb.core.calculus import epsilon_star
from delayhjb.core.errors import FamilyError, ParameterDomainError, ValueSearchError
from delayhjb.core.functionals import resolve_functional, zero_functional
from delayhjb.core.histories import History
from delayhjb.core.integrator import ControlSignal, cost, integrate
from delayhjb.core.problem import growth_bounds
from delayhjb.core.solutions import sample_characteristics
from delayhjb.core.value import (ValueFunctional, ValueQuery, ValueSearchConfig, block_layout, control_transplant,
                                 dpp_residual, nested_config, plan_block_len, psi_epsilon, psi_minus, psi_plus,
                                 t_continuity_gap, value, value_lipschitz)
from delayhjb.core.validators import problem_from_dict


def _brute_force(spec, t, z, w):
    k = spec.grid.node_index(t)
    best = np.inf
    for seq in itertools.product(range(len(spec.U)), repeat=spec.grid.n_intervals - k):
        trajectory, running = integrate(spec, t, z, w, ControlSignal.from_indices(spec, t, seq))
        best = min(best, cost(spec, trajectory, running))
    return best


def test_block_layout_is_anchored():
    assert block_layout(0, 4, 2) == [(0, 2), (2, 2)]
    assert block_layout(1, 4, 2) == [(0, 1), (1, 2)]
    assert block_layout(3, 3, 2) == []


def test_plan_block_len():
    assert plan_block_len(3, 4, 81) == (1, True)
    assert plan_block_len(3, 8, 100) == (4, False)
    assert plan_block_len(3, 0, 1) == (1, True)


def test_exhaustive_value_matches_brute_force(linear_spec, unit_point):
    t, z, w = unit_point
    result = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=100)))
    assert result.exhaustive and result.certified
    assert result.sequences_evaluated == 81
    assert result.value == pytest.approx(_brute_force(linear_spec, t, z, w), abs=1e-12)


def test_undelayed_value_hits_closed_form(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    result = value(lq_spec, ValueQuery(0.0, np.array([1.0]), w))
    # the constant control -1/2 is on the grid and optimal
    assert result.value == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(result.control.values[:, 0], -0.5)


def test_block_search_is_an_upper_bound(linear_spec, unit_point):
    t, z, w = unit_point
    exact = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=100))).value
    coarse = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=20, refine_rounds=1)))
    assert not coarse.exhaustive
    assert coarse.certified
    assert coarse.sequences_evaluated <= 20
    assert coarse.value >= exact - 1e-12


def test_tiny_budget_uses_constant_controls(linear_spec, unit_point):
    t, z, w = unit_point
    result = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=2)))
    assert result.sequences_evaluated == 2
    assert len(np.unique(result.control.values)) == 1


def test_budget_errors(linear_spec, unit_point):
    t, z, w = unit_point
    with pytest.raises(ValueSearchError):
        value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=0)))
    with pytest.raises(ValueSearchError):
        value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=10, block_len=1)))


def test_threads_do_not_change_the_value(linear_spec, unit_point):
    t, z, w = unit_point
    single = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=100, chunk_size=7)))
    pooled = value(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=100, chunk_size=7, threads=3)))
    assert single.value == pooled.value
    assert single.control == pooled.control


def test_dpp_residual_vanishes(linear_spec, unit_point):
    t, z, w = unit_point
    query = ValueQuery(t, z, w, ValueSearchConfig(budget=100))
    for tau in (0.25, 0.5, 0.75):
        assert dpp_residual(linear_spec, query, tau) <= 1e-9
    with pytest.raises(ValueSearchError):
        dpp_residual(linear_spec, query, 0.0)


def test_nested_config_pins_block_length(linear_spec, unit_point):
    t, z, w = unit_point
    config = nested_config(linear_spec, ValueQuery(t, z, w, ValueSearchConfig(budget=20)))
    # one block spans all four intervals
    assert config.block_len == 4
    assert config.refine_rounds == 0
    assert config.budget == 20


def test_value_functional_caches_results(linear_spec, unit_point):
    t, z, w = unit_point
    rho = ValueFunctional(linear_spec, ValueSearchConfig(budget=100))
    assert rho.argmin_motions(t, z, w) == []
    first = rho(t, z, w)
    assert rho(t, z, w) == first
    assert len(rho.results) == 1
    motions = rho.argmin_motions(t, z, w)
    assert len(motions) == 1
    assert motions[0].forward[0, 0] == 1.0
    assert rho.lipschitz(1.0) == value_lipschitz(linear_spec, 1.0)


def test_value_at_terminal_time_is_sigma(linear_spec, unit_point):
    _, z, w = unit_point
    result = value(linear_spec, ValueQuery(1.0, z, w))
    assert result.value == pytest.approx(linear_spec.sigma(z, w))


def test_envelopes_of_zero_functional_are_symmetric(linear_spec, unit_point):
    t, z, w = unit_point
    family = sample_characteristics(linear_spec, t, z, w, count=4)
    lam = 1.5
    eps = 0.5 * epsilon_star(linear_spec.grid, lam)
    phi = zero_functional()
    lower, i_low, _ = psi_minus(linear_spec, family, phi, lam, eps, 0.5, [0.5], family.trajectories[0].segment_at(2))
    upper, i_up, _ = psi_plus(linear_spec, family, phi, lam, eps, 0.5, [0.5], family.trajectories[0].segment_at(2))
    assert lower > 0
    assert upper == pytest.approx(-lower)
    assert i_low == i_up
    with pytest.raises(FamilyError):
        psi_minus(linear_spec, [], phi, lam, eps, 0.5, [0.5], w)


def test_control_transplant(linear_spec):
    u = ControlSignal(linear_spec.grid, 1, [[1.0], [0.0], [-1.0]])
    later = control_transplant(linear_spec, u, 0.5)
    np.testing.assert_allclose(later.values[:, 0], [0.0, -1.0])
    earlier = control_transplant(linear_spec, u, 0.0)
    np.testing.assert_allclose(earlier.values[:, 0], [1.0, 1.0, 0.0, -1.0])


def test_t_continuity_gap(linear_spec, unit_point):
    _, z, w = unit_point
    gap = t_continuity_gap(linear_spec, ValueQuery(0.25, z, w, ValueSearchConfig(budget=100)), 0.5)
    assert gap['gap'] == pytest.approx(abs(gap['value_t'] - gap['value_t_prime']))
    assert gap['transplant_cost'] >= gap['value_t_prime'] - 1e-12


def test_psi_epsilon_keeps_envelopes_within_zeta(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    phi = resolve_functional('smooth:undelayed_lq', lq_spec)
    family = sample_characteristics(lq_spec, 0.0, [1.0], w, count=4)
    lam, zeta = 1.5, 0.1
    alpha_x, _ = growth_bounds(lq_spec, 1.0)
    eps = psi_epsilon(lq_spec, lam, zeta, phi.lipschitz(alpha_x), 1.0)
    assert 0.0 < eps <= 0.5 * zeta
    assert eps < 0.5 * epsilon_star(lq_spec.grid, lam)
    grid = lq_spec.grid
    for y in family.trajectories:
        for j in range(grid.n_intervals + 1):
            tau, v, r = grid.node_time(j), y.value(j), y.segment_at(j)
            at_member = phi.evaluate(tau, v, r)
            assert abs(psi_minus(lq_spec, family, phi, lam, eps, tau, v, r)[0] - at_member) <= zeta
            assert abs(psi_plus(lq_spec, family, phi, lam, eps, tau, v, r)[0] - at_member) <= zeta
    with pytest.raises(ParameterDomainError):
        psi_epsilon(lq_spec, lam, 0.0, 1.0, 1.0)


def test_finer_control_set_never_raises_the_value():
    coarse = problem_from_dict(linear_desk_dict(discretization=3))
    fine = problem_from_dict(linear_desk_dict(discretization=5))
    w = History.constant(coarse.grid, [1.0])
    config = ValueSearchConfig(budget=1000)
    rough = value(coarse, ValueQuery(0.0, np.ones(1), w, config))
    refined = value(fine, ValueQuery(0.0, np.ones(1), w, config))
    assert rough.exhaustive and refined.exhaustive
    assert refined.value <= rough.value + 1e-12
