import numpy as np
import pytest

from conftest import linear_desk_dict
from delayhjb.core.errors import ConfigError, ParameterDomainError
from delayhjb.core.families import AbsRunningCost, LinearDelay, NormTerminalCost, ScalarLogisticDelay
from delayhjb.core.problem import (ControlSet, ProblemSpec, char_radius, char_set_contains, check_h3,
                                   growth_bounds, growth_check, hamiltonian, hamiltonian_batch,
                                   lipschitz_bound, lipschitz_check)
from delayhjb.core.validators import problem_from_dict


def test_box_control_set_discretization():
    U = ControlSet('box', lower=[-1.0], upper=[1.0], discretization=3)
    np.testing.assert_allclose(U.points[:, 0], [-1.0, 0.0, 1.0])
    assert U.contains([0.4])
    assert not U.contains([1.5])
    assert U.index_of([1.0]) == 2
    with pytest.raises(ValueError):
        U.index_of([0.5])


def test_finite_control_set_contains_only_points():
    U = ControlSet('finite', points=[[-1.0], [1.0]])
    assert U.contains([1.0])
    assert not U.contains([0.0])
    assert len(U) == 2


def test_control_set_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        ControlSet('ball')


def test_certified_growth_constant(linear_spec):
    assert linear_spec.c_f == pytest.approx(2.0)
    assert growth_check(linear_spec, alpha=3.0) <= 1.0 + 1e-12


def test_growth_override_below_certified_is_rejected():
    data = linear_desk_dict()
    data['constants'] = {'c_f': 1.0}
    with pytest.raises(ConfigError) as info:
        problem_from_dict(data)
    assert info.value.key_path == 'constants.c_f'


def test_lipschitz_ratios_within_bounds(linear_spec):
    ratios = lipschitz_check(linear_spec, alpha=2.0, draws=200)
    assert ratios['f'] <= 1.0 + 1e-9
    assert ratios['sigma'] <= 1.0 + 1e-9


@pytest.mark.parametrize('s, expected, u', [(0.0, 0.0, 0.0), (2.0, -1.0, -1.0), (-2.0, -1.0, 1.0), (1.0, -0.25, -0.5)])
def test_hamiltonian_of_undelayed_lq(lq_spec, s, expected, u):
    value, argmin = hamiltonian(lq_spec, 0.0, [0.3], [0.0], [s])
    assert value == pytest.approx(expected)
    np.testing.assert_allclose(argmin, [u])


def test_hamiltonian_batch_matches_pointwise(linear_spec):
    rng = np.random.default_rng(0)
    x, y, s = rng.normal(size=(3, 6, 1))
    values, idx = hamiltonian_batch(linear_spec, 0.25, x, y, s)
    for i in range(6):
        value, argmin = hamiltonian(linear_spec, 0.25, x[i], y[i], s[i])
        assert values[i] == pytest.approx(value)
        np.testing.assert_allclose(linear_spec.U[idx[i]], argmin)


def test_h3_identity_and_concavity(linear_spec):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, y, s1, s2 = rng.uniform(-2, 2, size=(4, 1))
        assert check_h3(linear_spec, 0.0, x, y, s1) <= 1e-9
        mid, _ = hamiltonian(linear_spec, 0.0, x, y, 0.5 * (s1 + s2))
        h1, _ = hamiltonian(linear_spec, 0.0, x, y, s1)
        h2, _ = hamiltonian(linear_spec, 0.0, x, y, s2)
        assert mid >= 0.5 * (h1 + h2) - 1e-12


def test_characteristic_radius(linear_spec):
    assert char_radius(linear_spec, [1.0], [-1.0]) == pytest.approx(6.0)
    assert char_set_contains(linear_spec, [1.0], [-1.0], [6.0])
    assert not char_set_contains(linear_spec, [1.0], [-1.0], [6.5])
    assert char_set_contains(linear_spec, [1.0], [-1.0], [6.5], eta=0.5)
    with pytest.raises(ParameterDomainError):
        char_set_contains(linear_spec, [1.0], [-1.0], [0.0], eta=-1.0)


def test_a_priori_bounds_grow_with_alpha(linear_spec):
    small_x, small_l = growth_bounds(linear_spec, 1.0)
    large_x, large_l = growth_bounds(linear_spec, 2.0)
    assert small_x > 1.0
    assert large_x > small_x and large_l > small_l
    assert lipschitz_bound(linear_spec, 2.0) >= lipschitz_bound(linear_spec, 1.0)
    with pytest.raises(ParameterDomainError):
        growth_bounds(linear_spec, 0.0)


def test_families_evaluate_batches():
    f = LinearDelay([[0.0, 1.0], [-1.0, 0.0]], np.eye(2), [[0.0], [1.0]])
    x = np.ones((4, 3, 2))
    u = np.zeros((4, 3, 1))
    assert f.f(0.0, x, x, u).shape == (4, 3, 2)
    logistic = ScalarLogisticDelay(0.8, y_clip=2.0)
    np.testing.assert_allclose(logistic.f(0.0, np.array([1.0]), np.array([5.0]), np.array([0.0])), [-0.8])
    running = AbsRunningCost(0.5, px=0.1).f0(0.0, np.array([[3.0, 4.0]]), None, np.array([[1.0, -1.0]]))
    assert float(running[0]) == pytest.approx(1.5)
    assert float(NormTerminalCost(1.0, q=0.2).value(np.array([3.0, 4.0]), 2.0)) == pytest.approx(5.4)


def test_control_dimension_must_match_dynamics():
    data = linear_desk_dict()
    data['dynamics']['C'] = [[1.0, 0.0]]
    with pytest.raises(ConfigError):
        problem_from_dict(data)
