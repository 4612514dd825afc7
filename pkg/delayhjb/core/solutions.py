"""
Checks of the solution notions for the HJB equation on (t, z, w): minimax
stability over characteristic families, the directional-derivative
inequalities, sub/superdifferential (viscosity) inequalities and the
terminal condition, plus the probe catalog and the equivalence battery.

Every family is a finite subset of the characteristic inclusion, so an
upper-stability pass and a lower-stability failure are the informative
verdicts; the reports carry which direction is evidence.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from delayhjb.config.config import Config
from delayhjb.core.calculus import (Functional, ci_estimate, dir_deriv,
                                    gradient_estimate, sample_directions, subdiff_member, superdiff_member)
from delayhjb.core.errors import FamilyError
from delayhjb.core.histories import History, Trajectory
from delayhjb.core.integrator import (ControlSignal, Selection, integrate, integrate_feedback,
                                      integrate_selection, selection_from_motion)
from delayhjb.core.problem import ProblemSpec, char_radius, hamiltonian, hamiltonian_batch
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class CharacteristicFamily:
    t: float
    z: np.ndarray
    w: History
    eta: float
    seed: int
    trajectories: List[Trajectory] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    def add(self, trajectory: Trajectory, label: str) -> None:
        self.trajectories.append(trajectory)
        self.labels.append(label)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for x in self.trajectories:
            digest.update(np.ascontiguousarray(x.forward).tobytes())
        return digest.hexdigest()

    def __len__(self) -> int:
        return len(self.trajectories)


def _radius_selection(spec: ProblemSpec, k: int, fractions: np.ndarray, eta: float) -> Selection:
    return Selection(spec.grid, k, fractions, eta=eta, scale='radius')


def sample_characteristics(spec: ProblemSpec, t: float, z, w: History, eta: float = 0.0,
                           count: int = Config.FAMILY_COUNT, seed: int = Config.DEFAULT_SEED,
                           extras: Sequence[Trajectory] = (),
                           blocks: int = Config.FAMILY_BLOCKS) -> CharacteristicFamily:
    if count < 3:
        raise FamilyError(f"family needs at least 3 members, got {count}")
    grid = spec.grid
    k = grid.node_index(t)
    n = spec.n
    n_steps = grid.n_intervals - k
    z = np.atleast_1d(np.asarray(z, dtype=float))
    family = CharacteristicFamily(t=t, z=z, w=w, eta=eta, seed=seed)

    planned: List[Tuple[str, Any]] = [('zero', Selection(grid, k, np.zeros((n_steps, n)), eta=eta))]
    for i in range(n):
        for sign, tag in ((1.0, '+'), (-1.0, '-')):
            e = np.zeros(n)
            e[i] = sign
            planned.append((f"ray{tag}e{i + 1}", _radius_selection(spec, k, np.tile(e, (n_steps, 1)), eta)))
    for index, u in enumerate(spec.U):
        planned.append((f"control{index}", ControlSignal.constant(spec, t, u)))
    rng = np.random.default_rng(seed)
    while len(planned) < count:
        fractions = np.empty((n_steps, n))
        for chunk in np.array_split(np.arange(n_steps), max(1, min(blocks, n_steps))):
            d = rng.normal(size=n)
            d /= max(float(np.linalg.norm(d)), 1e-12)
            fractions[chunk] = d * rng.uniform(0.0, 1.0)
        planned.append((f"random{len(planned)}", _radius_selection(spec, k, fractions, eta)))

    for label, item in planned[:count]:
        if isinstance(item, ControlSignal):
            motion, _ = integrate(spec, t, z, w, item)
            item = selection_from_motion(motion, eta)
        family.add(integrate_selection(spec, t, z, w, item), label)
    for index, x in enumerate(extras):
        family.add(integrate_selection(spec, t, z, w, selection_from_motion(x, eta)), f"extra{index}")
    logger.debug(f"Sampled {len(family)} characteristics at t={t:.6g} (eta={eta}, seed={seed})")
    return family


def s_extremal_motion(spec: ProblemSpec, t: float, z, w: History, s, eta: float = 0.0) -> Trajectory:
    """Motion whose control minimizes <f, s> + f0 at every node, as a member of the eta-inclusion."""
    s = np.atleast_1d(np.asarray(s, dtype=float))

    def policy(a, x, y, segment):
        return hamiltonian(spec, spec.grid.node_time(a), x, y, s)[1]

    _, motion, _ = integrate_feedback(spec, t, z, w, policy)
    return integrate_selection(spec, t, z, w, selection_from_motion(motion, eta))


def omega_increments(spec: ProblemSpec, x: Trajectory, s) -> np.ndarray:
    """Per-interval trapezoid of H(xi, x(xi), x(xi - h), s) - <x'(xi), s>."""
    grid = spec.grid
    k, m, dt = x.start_index, grid.m, grid.delta
    js = np.arange(k, grid.n_intervals)
    if len(js) == 0:
        return np.empty(0)
    base = k - m
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_rows = np.broadcast_to(s, (len(js), len(s)))
    times = grid.t0 + grid.delta * js
    h_a, _ = hamiltonian_batch(spec, times, x.right[js - base], x.right[js - m - base], s_rows)
    h_b, _ = hamiltonian_batch(spec, times + dt, x.right[js + 1 - base], x.left[js + 1 - m - base], s_rows)
    return 0.5 * dt * (h_a + h_b) - dt * (np.asarray(x.velocities) @ s)


def omega(spec: ProblemSpec, phi: Functional, x: Trajectory, t: float, tau: float, s,
          increments: Optional[np.ndarray] = None) -> float:
    grid = spec.grid
    i_t, i_tau = grid.node_index(t), grid.node_index(tau)
    if not x.start_index <= i_t <= i_tau:
        raise FamilyError(f"need start <= t <= tau on the member (t={t}, tau={tau})")
    if i_t == i_tau:
        return 0.0
    if increments is None:
        increments = omega_increments(spec, x, s)
    k = x.start_index
    integral = float(np.sum(increments[i_t - k:i_tau - k]))
    return (phi.evaluate(tau, x.value(i_tau), x.segment_at(i_tau))
            - phi.evaluate(t, x.value(i_t), x.segment_at(i_t)) + integral)


@dataclass
class StabilityReport:
    s: List[float]
    tau: float
    inf_omega: float
    sup_omega: float
    inf_member: str
    sup_member: str
    tolerance: float
    upper_pass: bool
    lower_pass: bool
    members: int
    semantics: Dict[str, str] = field(default_factory=lambda: {
        'upper': 'pass is evidence, failure is approximate',
        'lower': 'failure is refutation, pass is approximate'})

    @property
    def refuted(self) -> bool:
        return not self.lower_pass

    def to_dict(self) -> Dict[str, Any]:
        return {'s': self.s, 'tau': self.tau, 'inf_omega': self.inf_omega, 'sup_omega': self.sup_omega,
                'inf_member': self.inf_member, 'sup_member': self.sup_member, 'tolerance': self.tolerance,
                'upper_pass': self.upper_pass, 'lower_pass': self.lower_pass, 'members': self.members,
                'semantics': self.semantics}


def default_tolerance(spec: ProblemSpec) -> float:
    return Config.ZETA_TOL_SCALE * spec.grid.delta


def _radius_fractions(spec: ProblemSpec, x: Trajectory, eta: float) -> np.ndarray:
    m = spec.grid.m
    rows = []
    for j, v in enumerate(x.velocities):
        a = x.start_index + j
        rows.append(v / (char_radius(spec, x.value(a), x.value(a - m)) + eta))
    return np.array(rows)


def _improve(spec: ProblemSpec, phi: Functional, family: CharacteristicFamily, start: Trajectory,
             tau: float, s: np.ndarray, sign: float, sweeps: int, blocks: int) -> Tuple[float, Trajectory]:
    """Coordinate descent on radius fractions over blocks before tau; minimizes sign * omega."""
    grid = spec.grid
    t, k = family.t, start.start_index
    span = grid.node_index(tau) - k
    fractions = _radius_fractions(spec, start, family.eta)
    n = spec.n
    candidates = [np.zeros(n)]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        candidates.extend([e, -e])
    s_norm = float(np.linalg.norm(s))
    if s_norm > 0:
        candidates.extend([s / s_norm, -s / s_norm])

    best_x = start
    best = sign * omega(spec, phi, start, t, tau, s)
    for _ in range(sweeps):
        changed = False
        for chunk in np.array_split(np.arange(span), max(1, min(blocks, span))):
            for c in candidates:
                trial = fractions.copy()
                trial[chunk] = c
                x = integrate_selection(spec, t, family.z, family.w,
                                        Selection(grid, k, trial, eta=family.eta, scale='radius'))
                val = sign * omega(spec, phi, x, t, tau, s)
                if val < best:
                    best, best_x, fractions, changed = val, x, trial, True
        if not changed:
            break
    return sign * best, best_x


def minimax_check(spec: ProblemSpec, phi: Functional, t: float, z, w: History, tau: float, s,
                  eta: float, family: CharacteristicFamily, tol: Optional[float] = None,
                  sweeps: int = Config.IMPROVE_SWEEPS, blocks: int = Config.IMPROVE_BLOCKS) -> StabilityReport:
    if abs(family.t - t) > 1e-12 or family.eta != eta:
        raise FamilyError(f"family is based at t={family.t}, eta={family.eta}; check asks t={t}, eta={eta}")
    tol = default_tolerance(spec) if tol is None else tol
    s = np.atleast_1d(np.asarray(s, dtype=float))
    members = list(family.trajectories) + [s_extremal_motion(spec, t, z, w, s, eta)]
    labels = list(family.labels) + ['s-extremal']
    values = [omega(spec, phi, x, t, tau, s) for x in members]
    i_min, i_max = int(np.argmin(values)), int(np.argmax(values))
    inf_omega, sup_omega = values[i_min], values[i_max]
    inf_label, sup_label = labels[i_min], labels[i_max]

    if sweeps > 0 and spec.grid.node_index(tau) > spec.grid.node_index(t):
        improved, _ = _improve(spec, phi, family, members[i_min], tau, s, 1.0, sweeps, blocks)
        if improved < inf_omega:
            inf_omega, inf_label = improved, f"{inf_label}+descent"
        improved, _ = _improve(spec, phi, family, members[i_max], tau, s, -1.0, sweeps, blocks)
        if improved > sup_omega:
            sup_omega, sup_label = improved, f"{sup_label}+ascent"

    report = StabilityReport(s=s.tolist(), tau=tau, inf_omega=float(inf_omega), sup_omega=float(sup_omega),
                             inf_member=inf_label, sup_member=sup_label, tolerance=tol,
                             upper_pass=inf_omega <= tol, lower_pass=sup_omega >= -tol, members=len(members))
    logger.debug(f"Minimax at tau={tau:.6g}, s={s}: inf={inf_omega:.4g}, sup={sup_omega:.4g}")
    return report


@dataclass
class DerivReport:
    s: List[float]
    inf_margin: float
    sup_margin: float
    tolerance: float
    upper_pass: bool
    lower_pass: bool

    @property
    def refuted(self) -> bool:
        return not self.lower_pass

    def to_dict(self) -> Dict[str, Any]:
        return {'s': self.s, 'inf_margin': self.inf_margin, 'sup_margin': self.sup_margin,
                'tolerance': self.tolerance, 'upper_pass': self.upper_pass, 'lower_pass': self.lower_pass}


def deriv_directions(spec: ProblemSpec, phi: Functional, t: float, z, w: History, s,
                     count: int = Config.DIRECTION_SAMPLES, seed: int = Config.DEFAULT_SEED) -> np.ndarray:
    """F-ball sample: axis rays, s-aligned rays, control velocities and random directions."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    grad = gradient_estimate(phi, t, z, w)
    extra = [s, -s, grad - s, s - grad]
    directions = sample_directions(spec, t, z, w, count=count, seed=seed, extra=extra)
    y = w.start_value
    velocities = spec.f(t, np.broadcast_to(z, (len(spec.U), len(z))), np.broadcast_to(y, (len(spec.U), len(y))), spec.U)
    return np.concatenate([directions, np.atleast_2d(velocities)], axis=0)


def deriv_check(spec: ProblemSpec, phi: Functional, t: float, z, w: History, s,
                tol: float = Config.DERIV_TOLERANCE, directions=None,
                tail: int = Config.DIR_DERIV_TAIL) -> DerivReport:
    """
    inf over l of [lower derivative + H(s) - <l, s>] and sup of the upper
    counterpart; lower and upper range over the same quotient tail as dir_deriv.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if directions is None:
        directions = deriv_directions(spec, phi, t, z, w, s)
    h_value, _ = hamiltonian(spec, t, z, w.start_value, s)
    lows, highs = [], []
    for l in np.atleast_2d(directions):
        estimate = dir_deriv(phi, t, z, w, l, tail=tail)
        pairing = float(np.dot(l, s))
        lows.append(estimate.lower + h_value - pairing)
        highs.append(estimate.upper + h_value - pairing)
    inf_margin, sup_margin = float(min(lows)), float(max(highs))
    return DerivReport(s=s.tolist(), inf_margin=inf_margin, sup_margin=sup_margin, tolerance=tol,
                       upper_pass=inf_margin <= tol, lower_pass=sup_margin >= -tol)


@dataclass
class ViscosityReport:
    candidates: List[Dict[str, Any]]
    subsolution_pass: bool
    supersolution_pass: bool
    note: str = ''

    @property
    def violations(self) -> List[Dict[str, Any]]:
        return [c for c in self.candidates if not c['ok']]

    @property
    def refuted(self) -> bool:
        return not self.supersolution_pass

    def to_dict(self) -> Dict[str, Any]:
        return {'candidates': self.candidates, 'subsolution_pass': self.subsolution_pass,
                'supersolution_pass': self.supersolution_pass, 'note': self.note}


def default_candidates(phi: Functional, t: float, z, w: History,
                       offsets: Sequence[float] = (0.0, -0.1, 0.1)) -> List[Tuple[float, np.ndarray]]:
    p0 = ci_estimate(phi, t, z, w)
    p = gradient_estimate(phi, t, z, w)
    return [(p0 + d, p.copy()) for d in offsets]


def viscosity_check(spec: ProblemSpec, phi: Functional, t: float, z, w: History,
                    candidates: Optional[Sequence[Tuple[float, Any]]] = None,
                    tol: float = Config.VISCOSITY_TOLERANCE, directions=None,
                    membership_tol: float = Config.MEMBERSHIP_TOLERANCE) -> ViscosityReport:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if candidates is None:
        candidates = default_candidates(phi, t, z, w)
    if directions is None:
        directions = sample_directions(spec, t, z, w)
    rows = []
    sub_ok = super_ok = True
    admitted = 0
    for p0, p in candidates:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        h_value, _ = hamiltonian(spec, t, z, w.start_value, p)
        residual = float(p0) + h_value
        sub = subdiff_member(phi, t, z, w, p0, p, directions, membership_tol)
        sup = superdiff_member(phi, t, z, w, p0, p, directions, membership_tol)
        ok = True
        if sub.member:
            admitted += 1
            if residual > tol:
                ok = sub_ok = False
        if sup.member:
            admitted += 1
            if residual < -tol:
                ok = super_ok = False
        rows.append({'p0': float(p0), 'p': p.tolist(), 'residual': residual, 'sub_member': sub.member,
                     'sub_margin': sub.margin, 'super_member': sup.member, 'super_margin': sup.margin, 'ok': ok})
    note = '' if admitted else 'no candidates admitted'
    return ViscosityReport(candidates=rows, subsolution_pass=sub_ok, supersolution_pass=super_ok, note=note)


@dataclass
class TerminalReport:
    gap: float
    tolerance: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {'gap': self.gap, 'tolerance': self.tolerance, 'passed': self.passed}


def terminal_check(spec: ProblemSpec, phi: Functional, z, w: History,
                   tol: float = Config.TERMINAL_TOLERANCE) -> TerminalReport:
    gap = abs(phi.evaluate(spec.grid.theta, z, w) - spec.sigma(z, w))
    return TerminalReport(gap=float(gap), tolerance=tol, passed=gap <= tol)


@dataclass
class Probe:
    t: float
    z: np.ndarray
    w: History
    label: str

    def to_dict(self) -> Dict[str, Any]:
        return {'t': self.t, 'z': np.asarray(self.z).tolist(), 'history': self.w.to_literal(), 'label': self.label}


def with_jump(w: History, offset: float = 0.5) -> History:
    """w shifted by `offset` on the right half of the window, jumping at the middle node."""
    m = w.grid.m
    node = m // 2
    right = np.array(w.samples, dtype=float)
    right[node:] += offset
    left = np.array(w.left, dtype=float)
    left[node + 1:] += offset
    return History.from_arrays(w.grid, right, left)


def probe_catalog(spec: ProblemSpec, t: float, z, w: History, count: int = 10,
                  seed: int = Config.DEFAULT_SEED, motion: Optional[Trajectory] = None) -> List[Probe]:
    """Initial point, mid-horizon points along a reference and perturbed motions, and jump points."""
    grid = spec.grid
    z = np.atleast_1d(np.asarray(z, dtype=float))
    k = grid.node_index(t)
    N = grid.n_intervals
    if motion is None:
        zero_u = spec.U[int(np.argmin(np.linalg.norm(spec.U, axis=1)))]
        motion, _ = integrate(spec, t, z, w, ControlSignal.constant(spec, t, zero_u))
    probes = [Probe(t, z, w, 'initial'), Probe(t, z, with_jump(w), 'initial-jump')]
    for j in sorted({(k + N) // 2, (3 * k + N) // 4}):
        if k < j < N:
            probes.append(Probe(grid.node_time(j), motion.value(j).copy(), motion.segment_at(j), f"reference@{j}"))
    rng = np.random.default_rng(seed)
    attempts = 0
    while len(probes) < count and attempts < 10 * count:
        attempts += 1
        u = spec.U[int(rng.integers(0, len(spec.U)))]
        perturbed, _ = integrate(spec, t, z, w, ControlSignal.constant(spec, t, u))
        j = int(rng.integers(k + 1, N)) if N - k > 1 else k
        seg = perturbed.segment_at(j)
        if rng.uniform() < 0.3:
            seg = with_jump(seg, float(rng.uniform(-0.5, 0.5)))
            label = f"perturbed-jump@{j}"
        else:
            label = f"perturbed@{j}"
        probes.append(Probe(grid.node_time(j), perturbed.value(j).copy(), seg, label))
    return probes[:count]


def s_probes(n: int, count: int, seed: int = Config.DEFAULT_SEED, bound: float = Config.S_PROBE_BOUND) -> np.ndarray:
    """Zero, axes and corners of [-bound, bound]^n, then uniform draws."""
    rows = [np.zeros(n)]
    for i in range(n):
        e = np.zeros(n)
        e[i] = bound
        rows.extend([e, -e])
    for corner in np.array(np.meshgrid(*[[-bound, bound]] * n, indexing='ij')).reshape(n, -1).T:
        if n > 1:
            rows.append(corner)
    rng = np.random.default_rng(seed)
    while len(rows) < count:
        rows.append(rng.uniform(-bound, bound, size=n))
    return np.array(rows[:count])


def default_s_probes(phi: Functional, t: float, z, w: History, count: int, seed: int = Config.DEFAULT_SEED,
                     bound: float = Config.S_PROBE_BOUND) -> np.ndarray:
    grad = gradient_estimate(phi, t, z, w)
    rest = s_probes(len(grad), max(0, count - 1), seed, bound)
    return np.concatenate([grad[None, :], rest], axis=0) if len(rest) else grad[None, :]


@dataclass
class BatteryReport:
    phi: str
    rows: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def refuted(self) -> bool:
        return any(r['refutation'] and not r['passed'] for r in self.rows)

    @property
    def all_passed(self) -> bool:
        return all(r['passed'] for r in self.rows)

    def failures(self, check: Optional[str] = None) -> List[Dict[str, Any]]:
        return [r for r in self.rows if not r['passed'] and (check is None or r['check'] == check)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {'phi': self.phi, 'refuted': self.refuted, 'all_passed': self.all_passed,
                'checks': len(self.rows), 'failures': len(self.failures())}


def equivalence_battery(spec: ProblemSpec, phi: Functional, probes: Sequence[Probe], s_count: int = 4,
                        tau_steps: Sequence[int] = (1, 2), eta: float = 0.0, family_count: int = Config.FAMILY_COUNT,
                        seed: int = Config.DEFAULT_SEED, zeta_tol: Optional[float] = None,
                        sweeps: int = Config.IMPROVE_SWEEPS, extras_from=None) -> BatteryReport:
    """
    Terminal, minimax, derivative and viscosity checks at every probe.
    `extras_from(t, z, w)` may supply extra family members such as cached argmin motions.
    """
    grid = spec.grid
    report = BatteryReport(phi=phi.name)
    for index, probe in enumerate(probes):
        base = {'probe': index, 'label': probe.label, 't': probe.t}
        term = terminal_check(spec, phi, probe.z, probe.w)
        report.rows.append({**base, 'check': 'terminal', 's': None, 'tau': grid.theta, 'margin': -term.gap,
                            'passed': term.passed, 'refutation': True})
        k = grid.node_index(probe.t)
        if k >= grid.n_intervals:
            continue
        extras = list(extras_from(probe.t, probe.z, probe.w)) if extras_from is not None else []
        family = sample_characteristics(spec, probe.t, probe.z, probe.w, eta=eta, count=family_count,
                                        seed=seed + index, extras=extras)
        for s in default_s_probes(phi, probe.t, probe.z, probe.w, s_count, seed + index):
            for step in tau_steps:
                j = min(k + step, grid.n_intervals)
                mm = minimax_check(spec, phi, probe.t, probe.z, probe.w, grid.node_time(j), s, eta, family,
                                   tol=zeta_tol, sweeps=sweeps)
                report.rows.append({**base, 'check': 'minimax-upper', 's': mm.s, 'tau': mm.tau,
                                    'margin': mm.tolerance - mm.inf_omega, 'passed': mm.upper_pass,
                                    'refutation': False})
                report.rows.append({**base, 'check': 'minimax-lower', 's': mm.s, 'tau': mm.tau,
                                    'margin': mm.sup_omega + mm.tolerance, 'passed': mm.lower_pass,
                                    'refutation': True})
            dc = deriv_check(spec, phi, probe.t, probe.z, probe.w, s)
            report.rows.append({**base, 'check': 'deriv-upper', 's': dc.s, 'tau': None,
                                'margin': dc.tolerance - dc.inf_margin, 'passed': dc.upper_pass,
                                'refutation': False})
            report.rows.append({**base, 'check': 'deriv-lower', 's': dc.s, 'tau': None,
                                'margin': dc.sup_margin + dc.tolerance, 'passed': dc.lower_pass,
                                'refutation': True})
        vc = viscosity_check(spec, phi, probe.t, probe.z, probe.w)
        report.rows.append({**base, 'check': 'viscosity-sub', 's': None, 'tau': None, 'margin': None,
                            'passed': vc.subsolution_pass, 'refutation': False})
        report.rows.append({**base, 'check': 'viscosity-super', 's': None, 'tau': None, 'margin': None,
                            'passed': vc.supersolution_pass, 'refutation': True})
    logger.info(f"Battery for '{phi.name}': {len(report.rows)} checks, {len(report.failures())} failures, "
                f"refuted={report.refuted}")
    return report
