import numpy as np
import pytest

from conftest import undelayed_lq_dict
from delayhjb.core.calculus import Functional
from delayhjb.core.errors import FamilyError
from delayhjb.core.functionals import resolve_functional
from delayhjb.core.histories import History
from delayhjb.core.integrator import ControlSignal, integrate, required_eta
from delayhjb.core.solutions import (Probe, deriv_check, equivalence_battery, minimax_check, omega,
                                     omega_increments, probe_catalog, s_extremal_motion, s_probes,
                                     sample_characteristics, terminal_check, viscosity_check, with_jump)
from delayhjb.core.validators import problem_from_dict


@pytest.fixture
def fine_lq_spec():
    return problem_from_dict(undelayed_lq_dict(m=16))


def test_family_members_and_labels(linear_spec, unit_point):
    t, z, w = unit_point
    family = sample_characteristics(linear_spec, t, z, w, count=8)
    assert len(family) == 8
    assert family.labels[:3] == ['zero', 'ray+e1', 'ray-e1']
    assert 'control2' in family.labels
    assert all(required_eta(linear_spec, x) <= 1e-9 for x in family.trajectories)
    grown = sample_characteristics(linear_spec, t, z, w, count=3, extras=[family.trajectories[-1]])
    assert grown.labels == ['zero', 'ray+e1', 'ray-e1', 'extra0']
    with pytest.raises(FamilyError):
        sample_characteristics(linear_spec, t, z, w, count=2)


def test_family_fingerprint_follows_seed(linear_spec, unit_point):
    t, z, w = unit_point
    first = sample_characteristics(linear_spec, t, z, w, count=8, seed=5)
    again = sample_characteristics(linear_spec, t, z, w, count=8, seed=5)
    other = sample_characteristics(linear_spec, t, z, w, count=8, seed=6)
    assert first.fingerprint() == again.fingerprint()
    assert first.fingerprint() != other.fingerprint()


def test_s_extremal_with_zero_shift_is_the_cheapest_control(linear_spec, unit_point):
    t, z, w = unit_point
    motion = s_extremal_motion(linear_spec, t, z, w, [0.0])
    expected, _ = integrate(linear_spec, t, z, w, ControlSignal.constant(linear_spec, t, [0.0]))
    np.testing.assert_allclose(motion.forward, expected.forward, atol=1e-12)


def test_omega_is_additive(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    family = sample_characteristics(lq_spec, 0.0, [1.0], w, count=3)
    phi = resolve_functional('smooth:undelayed_lq', lq_spec)
    x = family.trajectories[1]
    s = [0.7]
    assert len(omega_increments(lq_spec, x, s)) == 4
    assert omega(lq_spec, phi, x, 0.5, 0.5, s) == 0.0
    whole = omega(lq_spec, phi, x, 0.0, 1.0, s)
    parts = omega(lq_spec, phi, x, 0.0, 0.5, s) + omega(lq_spec, phi, x, 0.5, 1.0, s)
    assert whole == pytest.approx(parts)
    with pytest.raises(FamilyError):
        omega(lq_spec, phi, x, 0.5, 0.25, s)


def test_minimax_check_needs_matching_family(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    family = sample_characteristics(lq_spec, 0.0, [1.0], w, count=3, eta=0.1)
    phi = resolve_functional('smooth:undelayed_lq', lq_spec)
    with pytest.raises(FamilyError):
        minimax_check(lq_spec, phi, 0.0, [1.0], w, 0.25, [0.0], 0.0, family)
    report = minimax_check(lq_spec, phi, 0.0, [1.0], w, 0.25, [0.0], 0.1, family, sweeps=0)
    assert report.members == 4
    assert report.inf_omega <= report.sup_omega
    assert report.to_dict()['semantics']['lower'].startswith('failure is refutation')


def test_larger_eta_widens_the_omega_range(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    phi = resolve_functional('smooth:undelayed_lq', lq_spec)
    s = [0.3]
    tight = sample_characteristics(lq_spec, 0.0, [1.0], w, count=4, eta=0.0)
    narrow = minimax_check(lq_spec, phi, 0.0, [1.0], w, 0.5, s, 0.0, tight, sweeps=0)
    # the eta = 0 motions stay feasible once the ball is enlarged
    carried = list(tight.trajectories) + [s_extremal_motion(lq_spec, 0.0, [1.0], w, s, 0.0)]
    loose = sample_characteristics(lq_spec, 0.0, [1.0], w, count=4, eta=0.5, extras=carried)
    wide = minimax_check(lq_spec, phi, 0.0, [1.0], w, 0.5, s, 0.5, loose, sweeps=0)
    assert wide.inf_omega <= narrow.inf_omega + 1e-9
    assert wide.sup_omega >= narrow.sup_omega - 1e-9


def test_terminal_check(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    closed = resolve_functional('smooth:undelayed_lq', lq_spec)
    assert terminal_check(lq_spec, closed, [0.7], w).passed
    moved = resolve_functional('smooth:undelayed_lq|offset=0.1', lq_spec)
    report = terminal_check(lq_spec, moved, [0.7], w)
    assert not report.passed
    assert report.gap == pytest.approx(0.1)


def test_deriv_check_refutes_time_shifted_closed_form(fine_lq_spec):
    w = History.zeros(fine_lq_spec.grid, 1)
    t, z = 0.25, [0.5]
    closed = resolve_functional('smooth:undelayed_lq', fine_lq_spec)
    grad = closed.z_gradient(t, np.array(z), w)
    assert not deriv_check(fine_lq_spec, closed, t, z, w, grad).refuted
    shifted = resolve_functional('smooth:undelayed_lq|shift=2', fine_lq_spec)
    report = deriv_check(fine_lq_spec, shifted, t, z, w, grad)
    assert report.refuted
    assert report.sup_margin < -1.0


def test_deriv_check_spans_every_quotient(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    curved = Functional('curved', lambda t, z, w: t * t)
    # quotients along any ray are the steps themselves: 1.0, 0.5, 0.25
    report = deriv_check(lq_spec, curved, 0.0, [1.0], w, [0.0], directions=[[1.0]])
    assert report.inf_margin == pytest.approx(0.25)
    assert report.sup_margin == pytest.approx(1.0)
    finest = deriv_check(lq_spec, curved, 0.0, [1.0], w, [0.0], directions=[[1.0]], tail=1)
    assert finest.sup_margin == pytest.approx(0.25)


def test_viscosity_of_closed_form(fine_lq_spec):
    w = History.zeros(fine_lq_spec.grid, 1)
    closed = resolve_functional('smooth:undelayed_lq', fine_lq_spec)
    report = viscosity_check(fine_lq_spec, closed, 0.25, [0.5], w)
    assert not report.refuted
    assert report.subsolution_pass
    assert len(report.candidates) == 3
    assert report.candidates[0]['sub_member']
    assert report.note == ''


def test_probe_catalog_labels(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    probes = probe_catalog(lq_spec, 0.0, [1.0], w, count=6)
    assert len(probes) == 6
    assert [p.label for p in probes[:4]] == ['initial', 'initial-jump', 'reference@1', 'reference@2']
    assert probes[1].w.jump_nodes == frozenset({1})
    assert all(0.0 < p.t < 1.0 for p in probes[2:])


def test_with_jump_shifts_right_half(lq_spec):
    w = with_jump(History.zeros(lq_spec.grid, 1), 0.5)
    np.testing.assert_allclose(w.samples[:, 0], [0.0, 0.5, 0.5])
    np.testing.assert_allclose(w.left_limit(1), [0.0])


def test_s_probes():
    rows = s_probes(1, 4, bound=3.0)
    assert rows.shape == (4, 1)
    np.testing.assert_allclose(rows[:3, 0], [0.0, 3.0, -3.0])
    assert np.all(np.abs(rows) <= 3.0)
    square = s_probes(2, 9, bound=1.0)
    assert {tuple(r) for r in square[5:]} == {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}


def test_battery_refutes_terminal_offset(lq_spec):
    w = History.zeros(lq_spec.grid, 1)
    phi = resolve_functional('smooth:undelayed_lq|offset=0.1', lq_spec)
    report = equivalence_battery(lq_spec, phi, [Probe(0.0, np.array([1.0]), w, 'initial')],
                                 s_count=1, tau_steps=(1,), sweeps=0)
    assert report.refuted
    assert len(report.failures('terminal')) == 1
    frame = report.to_frame()
    assert {'check', 'passed', 'refutation', 'margin'} <= set(frame.columns)
    assert report.to_dict()['refuted'] is True
