"""
Feedback synthesis by extremal shift: on each partition interval the control
minimizing <f, s_i> + f0 at the interval start is held, with s_i taken from
the gradient of a candidate functional, from the mu-envelope over a
characteristic family, or set to zero (myopic).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from delayhjb.config.config import Config
from delayhjb.core.calculus import Functional, central_gradient, decay_lambda, epsilon_star, mu_derivs, mu_gradient
from delayhjb.core.errors import FamilyError, ParameterDomainError, PartitionError
from delayhjb.core.histories import History, Trajectory
from delayhjb.core.integrator import ControlSignal, cost, integrate_feedback
from delayhjb.core.problem import ProblemSpec, hamiltonian, hamiltonian_batch
from delayhjb.core.solutions import CharacteristicFamily, sample_characteristics
from delayhjb.core.value import ValueFunctional, ValueQuery, ValueSearchConfig, psi_minus, value
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class FeedbackConfig:
    partitions: int = Config.FEEDBACK_PARTITIONS
    nodes: Optional[List[float]] = None
    shift_source: str = Config.FEEDBACK_SHIFT_SOURCE
    lam: Optional[float] = None
    eps: Optional[float] = None
    family_count: int = Config.FAMILY_COUNT
    seed: int = Config.DEFAULT_SEED
    gradient_step: Optional[float] = None

    def __post_init__(self):
        if self.shift_source not in Config.SHIFT_SOURCES:
            raise ParameterDomainError(f"unknown shift source '{self.shift_source}'")
        if self.partitions < 1:
            raise ParameterDomainError(f"partitions must be positive, got {self.partitions}")

    def to_dict(self) -> Dict[str, Any]:
        return {'partitions': self.partitions, 'nodes': self.nodes, 'shift_source': self.shift_source,
                'lam': self.lam, 'eps': self.eps, 'family_count': self.family_count, 'seed': self.seed}


@dataclass
class SynthesisResult:
    control: ControlSignal
    trajectory: Trajectory
    running: np.ndarray
    cost: float
    partition: List[int]
    shifts: List[List[float]] = field(default_factory=list)
    lam: Optional[float] = None
    eps: Optional[float] = None
    family: Optional[CharacteristicFamily] = None

    def to_dict(self) -> Dict[str, Any]:
        grid = self.control.grid
        return {'cost': self.cost, 'partition': [grid.node_time(j) for j in self.partition],
                'shifts': self.shifts, 'control': self.control.values.tolist(), 'lam': self.lam, 'eps': self.eps}


def partition_nodes(spec: ProblemSpec, t: float, config: FeedbackConfig) -> List[int]:
    """Absolute node indices tau_1 = t < ... < tau_{k+1} = theta."""
    grid = spec.grid
    k = grid.node_index(t)
    N = grid.n_intervals
    if config.nodes is not None:
        nodes = sorted({grid.node_index(tau) for tau in config.nodes} | {k, N})
        if nodes[0] < k:
            raise PartitionError(f"partition node {grid.node_time(nodes[0])} precedes t = {t}")
        return nodes
    if config.partitions > N - k:
        logger.warning(f"{config.partitions} partitions exceed the {N - k} grid intervals; using every node")
    return sorted({int(round(v)) for v in np.linspace(k, N, min(config.partitions, N - k) + 1)})


def default_mu_params(spec: ProblemSpec, z, w: History, lam: Optional[float] = None,
                      eps: Optional[float] = None):
    lam = decay_lambda(spec, z, w) if lam is None else lam
    eps = 0.5 * epsilon_star(spec.grid, lam) if eps is None else eps
    return lam, eps


def synthesize(spec: ProblemSpec, phi: Functional, t: float, z, w: History,
               config: Optional[FeedbackConfig] = None) -> SynthesisResult:
    config = config or FeedbackConfig()
    grid = spec.grid
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nodes = partition_nodes(spec, t, config)
    starts = set(nodes[:-1])
    family = None
    lam = eps = None
    if config.shift_source == 'envelope':
        lam, eps = default_mu_params(spec, z, w, config.lam, config.eps)
        extras = []
        if isinstance(phi, ValueFunctional):
            phi.result(t, z, w)
            extras = phi.argmin_motions(t, z, w)
        family = sample_characteristics(spec, t, z, w, eta=0.0, count=config.family_count, seed=config.seed,
                                        extras=extras)
        if len(family) == 0:
            raise FamilyError("envelope family is empty")

    shifts: List[List[float]] = []
    held = {'u': None}

    def policy(a, x, y, segment):
        if a in starts or held['u'] is None:
            tau = grid.node_time(a)
            if config.shift_source == 'zero':
                s = np.zeros(spec.n)
            elif config.shift_source == 'value-gradient':
                s = central_gradient(phi, tau, x, segment(), step=config.gradient_step)
            else:
                seg = segment()
                _, _, y_star = psi_minus(spec, family, phi, lam, eps, tau, x, seg)
                j = grid.node_index(tau)
                _, s = mu_derivs(lam, eps, tau, x - y_star.value(j), seg - y_star.segment_at(j))
            shifts.append(s.tolist())
            held['u'] = hamiltonian(spec, tau, x, y, s)[1]
        return held['u']

    control, trajectory, running = integrate_feedback(spec, t, z, w, policy)
    total = cost(spec, trajectory, running)
    logger.info(f"Synthesized {config.shift_source} feedback over {len(nodes) - 1} intervals: cost {total:.8g}")
    return SynthesisResult(control=control, trajectory=trajectory, running=running, cost=total,
                           partition=nodes, shifts=shifts, lam=lam, eps=eps, family=family)


@dataclass
class GapReport:
    synthesized: float
    value: float
    gap: float
    relative_gap: float
    synthesis: Optional[SynthesisResult] = None

    def to_dict(self) -> Dict[str, Any]:
        return {'synthesized': self.synthesized, 'value': self.value, 'gap': self.gap,
                'relative_gap': self.relative_gap}


def optimality_gap(spec: ProblemSpec, t: float, z, w: History, config: Optional[FeedbackConfig] = None,
                   value_config: Optional[ValueSearchConfig] = None,
                   phi: Optional[Functional] = None) -> GapReport:
    """Signed gap between the synthesized cost and the value estimate."""
    value_config = value_config or ValueSearchConfig()
    phi = phi or ValueFunctional(spec, value_config)
    synthesis = synthesize(spec, phi, t, z, w, config)
    estimate = value(spec, ValueQuery(t, np.atleast_1d(np.asarray(z, dtype=float)), w, value_config)).value
    gap = synthesis.cost - estimate
    return GapReport(synthesized=synthesis.cost, value=estimate, gap=gap,
                     relative_gap=gap / max(abs(estimate), 1e-12), synthesis=synthesis)


def _trapezoid(values: np.ndarray, dt: float) -> float:
    return float(0.5 * dt * np.sum(values[:-1] + values[1:]))


def _node_data(x: Trajectory, a: int, b: int, m: int):
    """States on nodes a..b and the delayed reads; the last read is the left limit at b - m."""
    xs = np.array([x.value(j) for j in range(a, b + 1)])
    kappa = np.array([x.value(j - m) for j in range(a, b)] + [x.left_value(b - m)])
    return xs, kappa


def interval_moduli(spec: ProblemSpec, members: Sequence[Trajectory], a: int, b: int,
                    lam: float, eps: float, max_pairs: int = 30) -> List[float]:
    """
    The five integral moduli on [tau_a, tau_b], maximized over ordered pairs
    (x, y) of family members and over U_d. With p = x - y and s the z-gradient
    of mu at p, they bound the variation against the interval-start data of
    f0(x, kappa, u), <f(x, kappa, u), s>, H(x, kappa, s), H(y, kappa, s) in s
    alone, and <y', s>. kappa is each motion's own delayed read, which is the
    base history on the first delay interval.
    """
    grid = spec.grid
    m, dt = grid.m, grid.delta
    U = spec.U
    times = grid.node_time(a) + dt * np.arange(b - a + 1)
    data = [_node_data(x, a, b, m) for x in members]
    moduli = [0.0] * 5
    for xs, kappa in data:
        run = spec.f0(times[:, None], xs[:, None, :], kappa[:, None, :], U)
        moduli[0] = max(moduli[0], max(_trapezoid(np.abs(run[:, c] - run[0, c]), dt) for c in range(len(U))))

    pairs = [(i, j) for i in range(len(members)) for j in range(len(members)) if i != j][:max_pairs]
    for i, j in pairs:
        xs, kx = data[i]
        ys, ky = data[j]
        s = mu_gradient(grid, lam, eps, times, xs - ys)
        s0 = np.broadcast_to(s[0], s.shape)
        vel = spec.f(times[:, None], xs[:, None, :], kx[:, None, :], U)
        paired = np.einsum('qci,qi->qc', vel, s)
        moduli[1] = max(moduli[1], max(_trapezoid(np.abs(paired[:, c] - paired[0, c]), dt) for c in range(len(U))))
        h_x, _ = hamiltonian_batch(spec, times, xs, kx, s)
        moduli[2] = max(moduli[2], _trapezoid(np.abs(h_x - h_x[0]), dt))
        h_y, _ = hamiltonian_batch(spec, times, ys, ky, s)
        h_y0, _ = hamiltonian_batch(spec, times, ys, ky, s0)
        moduli[3] = max(moduli[3], _trapezoid(np.abs(h_y - h_y0), dt))
        # y' is constant on each grid interval
        slopes = np.diff(ys, axis=0) / dt
        ds = s - s0
        left = np.abs(np.sum(slopes * ds[:-1], axis=1))
        right = np.abs(np.sum(slopes * ds[1:], axis=1))
        moduli[4] = max(moduli[4], float(0.5 * dt * np.sum(left + right)))
    return moduli


def partition_moduli(spec: ProblemSpec, t: float, z, w: History, family: CharacteristicFamily,
                     zeta: float, tau_bar: Optional[float] = None, lam: Optional[float] = None,
                     eps: Optional[float] = None) -> List[float]:
    """Greedy partition of [t, tau_bar] with every modulus <= zeta / (30 (tau_bar - t))."""
    if not zeta > 0:
        raise ParameterDomainError(f"zeta must be positive, got {zeta}")
    grid = spec.grid
    k = grid.node_index(t)
    end = grid.n_intervals if tau_bar is None else grid.node_index(tau_bar)
    if end <= k:
        raise PartitionError(f"tau_bar must exceed t = {t}")
    lam, eps = default_mu_params(spec, z, w, lam, eps)
    zeta_star = zeta / (30.0 * (grid.node_time(end) - t))
    members = list(family.trajectories)

    def worst(a: int, b: int) -> float:
        return max(interval_moduli(spec, members, a, b, lam, eps))

    nodes = [k]
    a = k
    while a < end:
        if worst(a, a + 1) > zeta_star:
            raise PartitionError(f"a single grid interval at t={grid.node_time(a):.6g} already exceeds "
                                 f"the modulus bound {zeta_star:.3g}; increase m")
        b = a + 1
        while b < end and worst(a, b + 1) <= zeta_star:
            b += 1
        nodes.append(b)
        a = b
    logger.info(f"Partition with {len(nodes) - 1} intervals for zeta={zeta:g} (lambda={lam:g}, eps={eps:.3g})")
    return [grid.node_time(j) for j in nodes]


def envelope_consistency(spec: ProblemSpec, synthesis: SynthesisResult, phi: Functional,
                         zeta: float, family: Optional[CharacteristicFamily] = None) -> List[float]:
    """
    Per partition interval: psi-(next) + running cost - psi-(start) - zeta dt / (3 (tau_bar - t)).
    Non-positive entries (up to numerical tolerance) mean the decrease inequality holds.
    """
    family = family or synthesis.family
    if family is None or synthesis.lam is None:
        raise FamilyError("envelope consistency needs the envelope family and mu parameters")
    grid = spec.grid
    x = synthesis.trajectory
    nodes = synthesis.partition
    k = x.start_index
    span = grid.node_time(nodes[-1]) - grid.node_time(nodes[0])
    defects = []
    previous = None
    for a, b in zip(nodes[:-1], nodes[1:]):
        if previous is None:
            previous, _, _ = psi_minus(spec, family, phi, synthesis.lam, synthesis.eps, grid.node_time(a),
                                       x.value(a), x.segment_at(a))
        following, _, _ = psi_minus(spec, family, phi, synthesis.lam, synthesis.eps, grid.node_time(b),
                                    x.value(b), x.segment_at(b))
        running = float(synthesis.running[b - k] - synthesis.running[a - k])
        allowance = zeta * (grid.node_time(b) - grid.node_time(a)) / (3.0 * span)
        defects.append(following + running - previous - allowance)
        previous = following
    return defects
