"""
Pointwise value functional: block-exhaustive search over piecewise-constant
U_d controls with beam refinement, the dynamic programming residual, the
mu-envelopes psi-/psi+ over characteristic families and the control
transplant between start times.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from delayhjb.config.config import Config
from delayhjb.core.calculus import Functional, epsilon_star, mu_eval
from delayhjb.core.errors import FamilyError, ParameterDomainError, ValueSearchError
from delayhjb.core.histories import History, Trajectory
from delayhjb.core.integrator import ControlSignal, cost, integrate, rollout
from delayhjb.core.problem import ProblemSpec, growth_bounds, lipschitz_bound
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ValueSearchConfig:
    budget: int = Config.VALUE_BUDGET
    block_len: Optional[int] = None
    beam_width: int = Config.VALUE_BEAM_WIDTH
    refine_rounds: int = Config.VALUE_REFINE_ROUNDS
    threads: int = Config.THREADS
    chunk_size: int = Config.VALUE_CHUNK_SIZE

    def to_dict(self) -> Dict[str, Any]:
        return {'budget': self.budget, 'block_len': self.block_len, 'beam_width': self.beam_width,
                'refine_rounds': self.refine_rounds}


@dataclass
class ValueQuery:
    t: float
    z: np.ndarray
    w: History
    config: ValueSearchConfig = field(default_factory=ValueSearchConfig)


@dataclass
class ValueResult:
    value: float
    control: ControlSignal
    trajectory: Trajectory
    certified: bool
    exhaustive: bool
    sequences_evaluated: int
    block_len: int
    budget: int

    def to_dict(self) -> Dict[str, Any]:
        return {'value': self.value, 'argmin_control': self.control.values.tolist(),
                'certified_upper_bound': self.certified, 'exhaustive': self.exhaustive,
                'sequences_evaluated': self.sequences_evaluated, 'block_len': self.block_len,
                'budget': self.budget}


def block_layout(start: int, end: int, block_len: int) -> List[Tuple[int, int]]:
    """Blocks (offset, length) covering intervals start..end-1, anchored at multiples of block_len."""
    blocks = []
    a = start
    while a < end:
        b = min(end, (a // block_len + 1) * block_len)
        blocks.append((a - start, b - a))
        a = b
    return blocks


def plan_block_len(n_controls: int, n_intervals: int, budget: int) -> Tuple[int, bool]:
    """Smallest power-of-two block length whose block-exhaustive pass fits the budget."""
    if n_intervals == 0 or n_controls ** n_intervals <= budget:
        return 1, True
    block_len = 2
    while block_len < n_intervals:
        n_blocks = math.ceil(n_intervals / block_len) + 1
        if n_controls ** n_blocks <= budget:
            return block_len, False
        block_len *= 2
    return block_len, False


def _expand(digits: np.ndarray, blocks: List[Tuple[int, int]], n_intervals: int) -> np.ndarray:
    seq = np.empty((digits.shape[0], n_intervals), dtype=int)
    for b, (offset, length) in enumerate(blocks):
        seq[:, offset:offset + length] = digits[:, b:b + 1]
    return seq


def _lex_digits(start: int, stop: int, n_blocks: int, base: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((len(idx), n_blocks), dtype=int)
    for b in range(n_blocks):
        digits[:, b] = (idx // base ** (n_blocks - 1 - b)) % base
    return digits


class _Evaluator:
    def __init__(self, spec: ProblemSpec, t: float, z: np.ndarray, w: History, config: ValueSearchConfig):
        self.spec = spec
        self.t = t
        self.z = z
        self.w = w
        self.config = config
        self.evaluated = 0

    def costs(self, sequences: np.ndarray) -> np.ndarray:
        if len(sequences) == 0:
            return np.empty(0)
        chunk = max(1, self.config.chunk_size)
        pieces = [sequences[i:i + chunk] for i in range(0, len(sequences), chunk)]

        def run(piece):
            return rollout(self.spec, self.t, self.z, self.w, self.spec.U[piece]).total_costs(self.spec)

        if self.config.threads > 1 and len(pieces) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                results = list(pool.map(run, pieces))
        else:
            results = [run(p) for p in pieces]
        self.evaluated += len(sequences)
        return np.concatenate(results)


def _top(sequences: np.ndarray, costs: np.ndarray, width: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(costs, kind='stable')[:width]
    return sequences[order], costs[order]


def value(spec: ProblemSpec, query: ValueQuery) -> ValueResult:
    config = query.config
    if config.budget < 1:
        raise ValueSearchError(f"search budget must be positive, got {config.budget}")
    grid = spec.grid
    k = grid.node_index(query.t)
    n_intervals = grid.n_intervals - k
    n_controls = len(spec.U)
    z = np.atleast_1d(np.asarray(query.z, dtype=float))
    evaluator = _Evaluator(spec, query.t, z, query.w, config)

    if config.block_len is not None:
        block_len = int(config.block_len)
        exhaustive = block_len == 1
    else:
        phase_budget = config.budget if config.refine_rounds == 0 else max(1, config.budget // 2)
        block_len, exhaustive = plan_block_len(n_controls, n_intervals, config.budget)
        if not exhaustive:
            block_len, _ = plan_block_len(n_controls, n_intervals, phase_budget)
    blocks = block_layout(k, grid.n_intervals, block_len)
    total = n_controls ** len(blocks)

    if total > config.budget and len(blocks) > 1 and config.block_len is not None:
        raise ValueSearchError(f"pinned block length {block_len} needs {total} sequences, budget is {config.budget}")

    beam_seq = np.empty((0, n_intervals), dtype=int)
    beam_cost = np.empty(0)
    if total > config.budget:
        # budget below a single block pass: constant controls only
        digits = np.arange(min(config.budget, n_controls)).reshape(-1, 1)
        sequences = np.repeat(digits, n_intervals, axis=1)
        costs = evaluator.costs(sequences)
        beam_seq, beam_cost = _top(sequences, costs, config.beam_width)
    else:
        chunk = max(1, config.chunk_size)
        for start in range(0, total, chunk):
            digits = _lex_digits(start, min(total, start + chunk), len(blocks), n_controls)
            sequences = _expand(digits, blocks, n_intervals)
            costs = evaluator.costs(sequences)
            merged_seq = np.concatenate([beam_seq, sequences])
            merged_cost = np.concatenate([beam_cost, costs])
            beam_seq, beam_cost = _top(merged_seq, merged_cost, config.beam_width)
    logger.debug(f"Block pass: block_len={block_len}, blocks={len(blocks)}, evaluated={evaluator.evaluated}")

    if not exhaustive and config.refine_rounds > 0 and n_intervals > 0:
        current_len = block_len
        for _ in range(config.refine_rounds):
            if current_len <= 1 or evaluator.evaluated >= config.budget:
                break
            current_len = max(1, current_len // 2)
            fine_blocks = block_layout(k, grid.n_intervals, current_len)
            candidates = []
            for parent in beam_seq:
                for offset, length in fine_blocks:
                    for c in range(n_controls):
                        if np.all(parent[offset:offset + length] == c):
                            continue
                        child = parent.copy()
                        child[offset:offset + length] = c
                        candidates.append(child)
            remaining = config.budget - evaluator.evaluated
            if not candidates or remaining <= 0:
                break
            candidates = np.array(candidates[:remaining])
            costs = evaluator.costs(candidates)
            beam_seq, beam_cost = _top(np.concatenate([beam_seq, candidates]),
                                       np.concatenate([beam_cost, costs]), config.beam_width)
            logger.debug(f"Refinement at block_len={current_len}: best={beam_cost[0]:.6g}")

    best_seq, best_cost = beam_seq[0], float(beam_cost[0])
    control = ControlSignal(grid, k, spec.U[best_seq])
    trajectory, running = integrate(spec, query.t, z, query.w, control)
    reevaluated = cost(spec, trajectory, running)
    certified = abs(reevaluated - best_cost) <= 1e-12 * (1.0 + abs(best_cost))
    if not certified:
        logger.warning(f"Re-evaluated cost {reevaluated!r} differs from search cost {best_cost!r}")
    logger.info(f"Value at t={query.t:.6g}: {reevaluated:.10g} ({evaluator.evaluated} sequences, "
                f"block_len={block_len}, exhaustive={exhaustive})")
    return ValueResult(value=reevaluated, control=control, trajectory=trajectory, certified=certified,
                       exhaustive=exhaustive, sequences_evaluated=evaluator.evaluated,
                       block_len=block_len, budget=config.budget)


def nested_config(spec: ProblemSpec, query: ValueQuery) -> ValueSearchConfig:
    """Block-exhaustive search pinned to the block length chosen at the query point."""
    k = spec.grid.node_index(query.t)
    config = query.config
    if config.block_len is not None:
        block_len = config.block_len
    else:
        block_len, _ = plan_block_len(len(spec.U), spec.grid.n_intervals - k, config.budget)
    n_blocks = len(block_layout(k, spec.grid.n_intervals, block_len))
    budget = max(config.budget, len(spec.U) ** n_blocks)
    return replace(config, block_len=block_len, refine_rounds=0, budget=budget)


def dpp_residual(spec: ProblemSpec, query: ValueQuery, tau: float) -> float:
    grid = spec.grid
    k = grid.node_index(query.t)
    j = grid.node_index(tau)
    if not k < j:
        raise ValueSearchError(f"tau = {tau} must exceed t = {query.t}")
    config = nested_config(spec, query)
    z = np.atleast_1d(np.asarray(query.z, dtype=float))
    left = value(spec, ValueQuery(query.t, z, query.w, config)).value

    blocks = block_layout(k, j, config.block_len)
    n_controls = len(spec.U)
    digits = _lex_digits(0, n_controls ** len(blocks), len(blocks), n_controls)
    sequences = _expand(digits, blocks, j - k)
    first_leg = rollout(spec, query.t, z, query.w, spec.U[sequences])
    best = math.inf
    for row in range(first_leg.size):
        inner = value(spec, ValueQuery(tau, first_leg.states[row, -1], first_leg.segment(row, j), config))
        best = min(best, float(first_leg.running[row, -1]) + inner.value)
    residual = abs(left - best)
    logger.info(f"DPP residual at tau={tau:.6g}: {residual:.3e}")
    return residual


def value_lipschitz(spec: ProblemSpec, alpha: float) -> float:
    """Class-Phi constant of rho on P(alpha): terminal and running parts both move by at most lambda_*."""
    alpha_x, _ = growth_bounds(spec, alpha)
    return max(spec.lambda_sigma(alpha_x), 1.0) * lipschitz_bound(spec, alpha)


class ValueFunctional(Functional):
    """rho as a Functional; results and argmin motions are cached per point."""

    def __init__(self, spec: ProblemSpec, config: Optional[ValueSearchConfig] = None):
        self.spec = spec
        self.config = config or ValueSearchConfig()
        self.results: Dict[Tuple, ValueResult] = {}
        super().__init__('value', self._evaluate, lipschitz=lambda alpha: value_lipschitz(spec, alpha))

    @staticmethod
    def _key(k: int, z: np.ndarray, w: History) -> Tuple:
        return (k, np.asarray(z, dtype=float).tobytes(), w.key())

    def result(self, t: float, z, w: History) -> ValueResult:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        key = self._key(self.spec.grid.node_index(t), z, w)
        if key not in self.results:
            self.results[key] = value(self.spec, ValueQuery(t, z, w, self.config))
        return self.results[key]

    def _evaluate(self, t: float, z, w: History) -> float:
        return self.result(t, z, w).value

    def argmin_motions(self, t: float, z, w: History) -> List[Trajectory]:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        key = self._key(self.spec.grid.node_index(t), z, w)
        found = self.results.get(key)
        return [found.trajectory] if found is not None else []


def _family_members(family) -> List[Trajectory]:
    members = list(getattr(family, 'trajectories', family))
    if not members:
        raise FamilyError("envelope family is empty")
    return members


def _envelope(spec: ProblemSpec, family, phi: Functional, lam: float, eps: float,
              tau: float, v, r: History, sign: float) -> Tuple[float, int, Trajectory]:
    members = _family_members(family)
    j = spec.grid.node_index(tau)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    best, best_index = None, -1
    for index, y in enumerate(members):
        y_tau = y.value(j)
        seg = y.segment_at(j)
        total = phi.evaluate(tau, y_tau, seg) + sign * mu_eval(lam, eps, tau, v - y_tau, r - seg)
        if best is None or (sign > 0 and total < best) or (sign < 0 and total > best):
            best, best_index = total, index
    return float(best), best_index, members[best_index]


def psi_minus(spec: ProblemSpec, family, phi: Functional, lam: float, eps: float,
              tau: float, v, r: History) -> Tuple[float, int, Trajectory]:
    """min over the family of phi(tau, y(tau), y_tau) + mu(tau, v - y(tau), r - y_tau)."""
    return _envelope(spec, family, phi, lam, eps, tau, v, r, 1.0)


def psi_plus(spec: ProblemSpec, family, phi: Functional, lam: float, eps: float,
             tau: float, v, r: History) -> Tuple[float, int, Trajectory]:
    """max over the family of phi(tau, y(tau), y_tau) - mu(tau, v - y(tau), r - y_tau)."""
    return _envelope(spec, family, phi, lam, eps, tau, v, r, -1.0)


def psi_epsilon(spec: ProblemSpec, lam: float, zeta: float, lambda_phi: float, alpha: float) -> float:
    if zeta <= 0 or lambda_phi <= 0:
        raise ParameterDomainError("zeta and lambda_phi must be positive")
    eps_star = epsilon_star(spec.grid, lam)
    eps0 = 0.5 * eps_star
    alpha_x, _ = growth_bounds(spec, alpha)
    theta = 2.0 * lambda_phi * (1.0 + spec.grid.h) * alpha_x + zeta
    bound = min(zeta, eps0, zeta * (eps_star - eps0) / (lambda_phi * theta))
    return 0.5 * bound


def control_transplant(spec: ProblemSpec, u: ControlSignal, t_prime: float) -> ControlSignal:
    grid = spec.grid
    k_new = grid.node_index(t_prime)
    k = u.start_index
    if k_new >= k:
        return ControlSignal(grid, k_new, u.values[k_new - k:].copy())
    prefix = np.tile(u.values[0], (k - k_new, 1))
    return ControlSignal(grid, k_new, np.concatenate([prefix, u.values], axis=0))


def t_continuity_gap(spec: ProblemSpec, query: ValueQuery, t_prime: float) -> Dict[str, float]:
    """Compare rho at t and t' with the cost of the transplanted argmin control."""
    z = np.atleast_1d(np.asarray(query.z, dtype=float))
    here = value(spec, query)
    there = value(spec, ValueQuery(t_prime, z, query.w, query.config))
    moved = control_transplant(spec, here.control, t_prime)
    trajectory, running = integrate(spec, t_prime, z, query.w, moved)
    transplant_cost = cost(spec, trajectory, running)
    return {'value_t': here.value, 'value_t_prime': there.value, 'transplant_cost': transplant_cost,
            'gap': abs(here.value - there.value), 'transplant_excess': transplant_cost - here.value}
