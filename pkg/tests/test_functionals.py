import numpy as np
import pytest

from delayhjb.core.errors import ConfigError
from delayhjb.core.functionals import resolve_functional, terminal_extended, undelayed_lq_functional
from delayhjb.core.histories import History
from delayhjb.core.oracles import undelayed_box_lq_derivs, undelayed_box_lq_value
from delayhjb.core.value import ValueFunctional


def test_resolves_base_names(linear_spec):
    assert isinstance(resolve_functional('value', linear_spec), ValueFunctional)
    assert resolve_functional('zero', linear_spec).name == 'zero'
    assert resolve_functional('mu(1.5, 0.01)', linear_spec).has_closed_forms
    assert resolve_functional('terminal-extended', linear_spec).has_closed_forms


@pytest.mark.parametrize('name', ['', 'nope', 'mu(1.0,0.01)', 'mu(a,b)', 'mu(1.5,0.9)', 'zero|bogus',
                                  'zero|shift=x'])
def test_bad_names_point_at_phi(linear_spec, name):
    with pytest.raises(ConfigError) as info:
        resolve_functional(name, linear_spec)
    assert info.value.key_path == 'phi'


def test_modifiers_compose(linear_spec, unit_point):
    t, z, w = unit_point
    shifted = resolve_functional('smooth:quadratic|shift=0.5', linear_spec)
    assert shifted(t, z, w) == pytest.approx(1.5)
    assert shifted.ci_derivative(t, z, w) == pytest.approx(-0.5)
    doubled = resolve_functional('smooth:quadratic|scale=2', linear_spec)
    assert doubled(t, z, w) == pytest.approx(2.0)
    np.testing.assert_allclose(doubled.z_gradient(t, z, w), [4.0])
    assert doubled.lipschitz(1.0) == pytest.approx(4.0)
    both = resolve_functional('smooth:quadratic|offset=0.1|scale=2', linear_spec)
    assert both(t, z, w) == pytest.approx(2.2)
    assert both.name == 'smooth:quadratic|offset=0.1|scale=2'


def test_terminal_extended_is_sigma(linear_spec, unit_point):
    _, z, w = unit_point
    phi = terminal_extended(linear_spec)
    for t in (0.0, 0.5, 1.0):
        assert phi(t, z, w) == pytest.approx(linear_spec.sigma(z, w))
    assert phi.ci_derivative(0.0, z, w) == 0.0
    np.testing.assert_allclose(phi.z_gradient(0.0, z, w), [2.0])


@pytest.mark.parametrize('z', [-2.5, -1.0, 0.0, 0.4, 3.0])
def test_undelayed_closed_form_meets_terminal_cost(lq_spec, z):
    phi = undelayed_lq_functional(lq_spec.grid.theta)
    assert phi(1.0, [z], History.zeros(lq_spec.grid, 1)) == pytest.approx(z * z)


def test_closed_form_is_c1_across_the_saturation_switch():
    T = 0.75
    a = 1.0 + T
    inside = undelayed_box_lq_derivs(T, a - 1e-9)
    outside = undelayed_box_lq_derivs(T, a + 1e-9)
    np.testing.assert_allclose(inside, outside, atol=1e-6)
    assert undelayed_box_lq_value(T, a - 1e-9) == pytest.approx(undelayed_box_lq_value(T, a + 1e-9))
    assert undelayed_box_lq_value(1.0, 1.0) == pytest.approx(0.5)
