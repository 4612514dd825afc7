"""
Problem definition: dynamics, costs and the discretized control set, the
Hamiltonian over that set, the characteristic bound set F with its
eta-enlargement, and the a-priori constants for motions and initial data.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from delayhjb.core.errors import ConfigError, ParameterDomainError
from delayhjb.core.families import (DynamicsFamily, RunningCost, TerminalCost,
                                     growth_constant, lipschitz_constant)
from delayhjb.core.histories import History, TimeGrid, norm_l1
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


class ControlSet:
    """Compact control set U (box or finite) and its finite discretization U_d."""

    def __init__(self, kind: str, points: Optional[Sequence] = None, lower=None, upper=None,
                 discretization: int = 5):
        self.kind = kind
        if kind == 'box':
            self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
            self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
            if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
                raise ConfigError('control', 'box bounds must have equal length with lower <= upper')
            self.discretization = int(discretization)
            if self.discretization < 1:
                raise ConfigError('control.discretization', 'must be at least 1')
            axes = [np.linspace(lo, hi, self.discretization) if self.discretization > 1 else np.array([lo])
                    for lo, hi in zip(self.lower, self.upper)]
            grid = np.array(list(itertools.product(*axes)), dtype=float)
            self.corners = np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)
        elif kind == 'finite':
            grid = np.asarray(points, dtype=float)
            if grid.ndim == 1:
                grid = grid.reshape(-1, 1)
            if grid.size == 0:
                raise ConfigError('control.points', 'finite control set must be nonempty')
            self.lower = grid.min(axis=0)
            self.upper = grid.max(axis=0)
            self.discretization = len(grid)
            self.corners = grid
        else:
            raise ConfigError('control.set', f"unknown control set '{kind}' (expected 'box' or 'finite')")
        grid.setflags(write=False)
        self.points = grid

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind == 'box':
            return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))
        return bool(np.any(np.all(np.abs(self.corners - u) <= tol, axis=1)))

    def index_of(self, u) -> int:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        hits = np.nonzero(np.all(np.abs(self.points - u) <= 1e-12, axis=1))[0]
        if len(hits) == 0:
            raise ValueError(f"control {u} is not an element of U_d")
        return int(hits[0])

    def with_points(self, points) -> 'ControlSet':
        """Same description, different discretization (used for U_d nesting studies)."""
        return ControlSet('finite', points=points)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == 'box':
            return {'set': 'box', 'lower': self.lower.tolist(), 'upper': self.upper.tolist(),
                    'discretization': self.discretization}
        return {'set': 'finite', 'points': self.points.tolist()}


@dataclass(frozen=True)
class ProblemSpec:
    grid: TimeGrid
    dynamics: DynamicsFamily
    running: RunningCost
    terminal: TerminalCost
    control_set: ControlSet
    c_f_override: Optional[float] = None
    name: str = 'problem'

    def __post_init__(self):
        if self.dynamics.control_dim != self.control_set.dim:
            raise ConfigError('control', f"control dimension {self.control_set.dim} does not match "
                                         f"dynamics ({self.dynamics.control_dim})")
        certified = growth_constant(self.dynamics, self.running, self.control_set.corners)
        if self.c_f_override is not None and self.c_f_override < certified:
            raise ConfigError('constants.c_f', f"override {self.c_f_override} is below the certified "
                                               f"growth constant {certified:.6g}")
        object.__setattr__(self, '_certified_c_f', certified)

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def control_dim(self) -> int:
        return self.control_set.dim

    @property
    def family(self) -> str:
        return self.dynamics.name

    @property
    def c_f(self) -> float:
        if self.c_f_override is not None:
            return float(self.c_f_override)
        return self._certified_c_f

    @property
    def U(self) -> np.ndarray:
        return self.control_set.points

    def f(self, t, x, y, u) -> np.ndarray:
        return self.dynamics.f(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                               np.asarray(u, dtype=float))

    def f0(self, t, x, y, u):
        return self.running.f0(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                               np.asarray(u, dtype=float))

    def sigma(self, z, w: History) -> float:
        return float(self.terminal.value(np.atleast_1d(np.asarray(z, dtype=float)), norm_l1(w)))

    def sigma_batch(self, z: np.ndarray, w_l1: np.ndarray) -> np.ndarray:
        return self.terminal.value(z, w_l1)

    def lambda_f(self, alpha: float) -> float:
        return lipschitz_constant(self.dynamics, self.running, alpha)

    def lambda_sigma(self, alpha: float) -> float:
        return float(self.terminal.lipschitz(alpha))

    def with_control_points(self, points) -> 'ProblemSpec':
        return ProblemSpec(self.grid, self.dynamics, self.running, self.terminal,
                           self.control_set.with_points(points), self.c_f_override, self.name)

    def with_grid(self, grid: TimeGrid) -> 'ProblemSpec':
        return ProblemSpec(grid, self.dynamics, self.running, self.terminal,
                           self.control_set, self.c_f_override, self.name)


def hamiltonian_batch(spec: ProblemSpec, t, x: np.ndarray, y: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """H over U_d for leading batch axes; returns (values, argmin indices)."""
    U = spec.U
    x = np.asarray(x, dtype=float)[..., None, :]
    y = np.asarray(y, dtype=float)[..., None, :]
    t = np.asarray(t, dtype=float)[..., None] if np.ndim(t) else t
    s = np.asarray(s, dtype=float)
    vel = spec.f(t, x, y, U)
    cost = spec.f0(t, x, y, U)
    scores = np.einsum('...ki,...i->...k', vel, s) + cost
    idx = np.argmin(scores, axis=-1)
    values = np.take_along_axis(scores, idx[..., None], axis=-1)[..., 0]
    return values, idx


def hamiltonian(spec: ProblemSpec, t: float, x, y, s) -> Tuple[float, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    values, idx = hamiltonian_batch(spec, t, x, y, s)
    return float(values), spec.U[int(idx)].copy()


def char_radius(spec: ProblemSpec, x, y) -> float:
    return spec.c_f * (1.0 + float(np.linalg.norm(np.atleast_1d(x))) + float(np.linalg.norm(np.atleast_1d(y))))


def char_set_contains(spec: ProblemSpec, x, y, l, eta: float = 0.0) -> bool:
    if eta < 0:
        raise ParameterDomainError(f"eta must be non-negative, got {eta}")
    return float(np.linalg.norm(np.atleast_1d(l))) <= char_radius(spec, x, y) + eta


def _horizon(spec: ProblemSpec) -> float:
    return spec.grid.theta - spec.grid.t0


def alpha_star(spec: ProblemSpec, alpha: float) -> float:
    return (1.0 + spec.c_f * spec.grid.h) * alpha + spec.c_f * _horizon(spec)


def growth_bounds(spec: ProblemSpec, alpha: float) -> Tuple[float, float]:
    if alpha <= 0:
        raise ParameterDomainError(f"alpha must be positive, got {alpha}")
    a_star = alpha_star(spec, alpha)
    alpha_x = a_star * math.exp(2.0 * spec.c_f * _horizon(spec))
    lambda_x = spec.c_f * (1.0 + 2.0 * alpha_x)
    return alpha_x, lambda_x


def lipschitz_formula(lambda_f: float, horizon: float) -> float:
    return (1.0 + lambda_f) * (2.0 + (1.0 + 2.0 * lambda_f) * horizon * math.exp(2.0 * lambda_f * horizon))


def lipschitz_bound(spec: ProblemSpec, alpha: float) -> float:
    alpha_x, _ = growth_bounds(spec, alpha)
    return lipschitz_formula(spec.lambda_f(alpha_x), _horizon(spec))


def hamiltonian_lipschitz(spec: ProblemSpec, alpha: float) -> float:
    return spec.lambda_f(alpha) * (1.0 + max(1.0, spec.c_f))


def default_q_grid(s, points: int = 41, radius: float = 2.0) -> np.ndarray:
    """s itself plus `points` offsets along every axis."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    offsets = np.linspace(-radius, radius, points)
    rows = [s]
    for i in range(len(s)):
        for d in offsets:
            q = s.copy()
            q[i] += d
            rows.append(q)
    return np.array(rows)


def check_h3(spec: ProblemSpec, t: float, x, y, s, q_grid=None) -> float:
    """Largest gap between H(s) and the max-min / min-max ball identities over q_grid."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    q_grid = default_q_grid(s) if q_grid is None else np.atleast_2d(np.asarray(q_grid, dtype=float))
    r = char_radius(spec, x, y)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h_s, _ = hamiltonian(spec, t, x, y, s)
    h_q, _ = hamiltonian_batch(spec, t, np.broadcast_to(x, q_grid.shape), np.broadcast_to(y, q_grid.shape), q_grid)
    dist = np.linalg.norm(s[None, :] - q_grid, axis=1)
    # min over the ball of <f, s - q> sits at f = -r (s - q)/||s - q||
    max_min = float(np.max(h_q - r * dist))
    min_max = float(np.min(h_q + r * dist))
    return max(abs(max_min - h_s), abs(min_max - h_s))


def growth_check(spec: ProblemSpec, alpha: float = 5.0, draws: int = 500, seed: int = 0) -> float:
    """Worst ratio (||f|| + |f0|) / (c_f (1 + ||x|| + ||y||)) over random draws; <= 1 when (f3) holds."""
    rng = np.random.default_rng(seed)
    n = spec.n
    x = rng.uniform(-alpha, alpha, size=(draws, n))
    y = rng.uniform(-alpha, alpha, size=(draws, n))
    u = spec.U[rng.integers(0, len(spec.U), size=draws)]
    t = rng.uniform(spec.grid.t0, spec.grid.theta, size=draws)
    vel = np.linalg.norm(spec.f(t[:, None], x, y, u), axis=1)
    cost = np.abs(spec.f0(t, x, y, u))
    bound = spec.c_f * (1.0 + np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1))
    return float(np.max((vel + cost) / bound))


def lipschitz_check(spec: ProblemSpec, alpha: float = 2.0, draws: int = 500, seed: int = 0) -> Dict[str, float]:
    """Worst observed ratios against lambda_f(alpha) and lambda_sigma(alpha); <= 1 when (f2), (sigma) hold."""
    rng = np.random.default_rng(seed)
    n = spec.n

    def ball(size):
        v = rng.normal(size=(size, n))
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
        return v * alpha * rng.uniform(0, 1, size=(size, 1))

    x, x2, y, y2 = ball(draws), ball(draws), ball(draws), ball(draws)
    u = spec.U[rng.integers(0, len(spec.U), size=draws)]
    t = rng.uniform(spec.grid.t0, spec.grid.theta, size=draws)
    df = np.linalg.norm(spec.f(t[:, None], x, y, u) - spec.f(t[:, None], x2, y2, u), axis=1)
    df0 = np.abs(spec.f0(t, x, y, u) - spec.f0(t, x2, y2, u))
    dist = np.linalg.norm(x - x2, axis=1) + np.linalg.norm(y - y2, axis=1)
    f_ratio = float(np.max((df + df0) / np.maximum(dist, 1e-12))) / max(spec.lambda_f(alpha), 1e-12)

    grid = spec.grid
    worst_sigma = 0.0
    for _ in range(min(draws, 100)):
        z1, z2 = ball(1)[0], ball(1)[0]
        w1 = History(grid, ball(grid.m + 1))
        w2 = History(grid, ball(grid.m + 1))
        d = float(np.linalg.norm(z1 - z2)) + norm_l1(w1 - w2)
        if d > 1e-12:
            worst_sigma = max(worst_sigma, abs(spec.sigma(z1, w1) - spec.sigma(z2, w2)) / d)
    sigma_ratio = worst_sigma / max(spec.lambda_sigma(alpha), 1e-12)
    return {'f': f_ratio, 'sigma': sigma_ratio}
