"""
State space of delay systems on a uniform grid.

Histories live on the delay window [-h, 0] sampled at m+1 nodes. A history is
stored as two node arrays: the node (right) values and the left limits. On
each grid interval [xi_j, xi_{j+1}) the function runs linearly from the node
value at j to the left limit at j+1, so a jump sits exactly at the nodes where
the two arrays differ. Trajectories glue a history to a continuous forward
part on [t, theta].
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Sequence, Tuple, Any

import numpy as np

from delayhjb.core.errors import GridError, HistoryError, TrajectoryError
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)

INTERPOLATIONS = ('linear', 'constant')
_NODE_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    theta: float
    h: float
    m: int

    def __post_init__(self):
        if not self.t0 < self.theta:
            raise GridError(f"t0 must be smaller than theta (got {self.t0} >= {self.theta})")
        if not self.h > 0:
            raise GridError(f"delay h must be positive, got {self.h}")
        if int(self.m) != self.m or self.m < 2:
            raise GridError(f"m must be an integer >= 2, got {self.m}")
        ratio = (self.theta - self.t0) / self.delta
        if abs(ratio - round(ratio)) > _NODE_TOL * max(1.0, ratio):
            raise GridError(f"(theta - t0) = {self.theta - self.t0} is not a multiple of delta = {self.delta}")

    @property
    def delta(self) -> float:
        return self.h / self.m

    @property
    def n_intervals(self) -> int:
        return int(round((self.theta - self.t0) / self.delta))

    def node_time(self, j: int) -> float:
        return self.t0 + j * self.delta

    def node_index(self, t: float) -> int:
        ratio = (t - self.t0) / self.delta
        j = int(round(ratio))
        if abs(ratio - j) > _NODE_TOL * max(1.0, abs(ratio)):
            raise GridError(f"time {t} is not a grid node (delta = {self.delta})")
        if j < 0 or j > self.n_intervals:
            raise GridError(f"time {t} lies outside [{self.t0}, {self.theta}]")
        return j

    def times(self, start: int = 0) -> np.ndarray:
        return self.t0 + self.delta * np.arange(start, self.n_intervals + 1)

    def window(self) -> np.ndarray:
        """Node offsets xi_0 = -h, ..., xi_m = 0 of the delay window."""
        return -self.h + self.delta * np.arange(self.m + 1)

    def refined(self, factor: int = 2) -> 'TimeGrid':
        return TimeGrid(self.t0, self.theta, self.h, self.m * factor)

    def to_dict(self) -> Dict[str, Any]:
        return {'t0': self.t0, 'theta': self.theta, 'h': self.h, 'm': self.m}


def _as_matrix(values, rows: int, n: Optional[int], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if n in (None, 1) else arr.reshape(rows, -1)
    if arr.ndim != 2 or arr.shape[0] != rows:
        raise HistoryError(f"{what} must have {rows} rows, got shape {arr.shape}")
    if n is not None and arr.shape[1] != n:
        raise HistoryError(f"{what} must have {n} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise HistoryError(f"{what} contains non-finite values")
    return arr


class History:
    """Piecewise-continuous function on [-h, 0] with node-aligned jumps."""

    __slots__ = ('grid', 'samples', 'left', 'interpolation', '_jumps')

    def __init__(self, grid: TimeGrid, samples, jumps: Iterable[int] = (),
                 left_limits=None, interpolation: str = 'linear'):
        if interpolation not in INTERPOLATIONS:
            raise HistoryError(f"unknown interpolation '{interpolation}'")
        m = grid.m
        right = _as_matrix(samples, m + 1, None, 'samples')
        n = right.shape[1]
        jumps = sorted({int(j) for j in jumps})
        if any(j < 1 or j > m for j in jumps):
            raise HistoryError(f"jump nodes must lie in 1..{m}, got {jumps}")

        if interpolation == 'constant':
            left = right.copy()
            left[1:] = right[:-1]
        else:
            left = right.copy()
            # the left piece holds its value up to a jump node
            for j in jumps:
                left[j] = right[j - 1]
        if left_limits is not None:
            given = _as_matrix(left_limits, m + 1, n, 'left_limits') if not isinstance(left_limits, dict) else None
            if given is not None:
                left = given.copy()
            else:
                for j, value in left_limits.items():
                    j = int(j)
                    if j not in jumps:
                        raise HistoryError(f"left limit given for node {j} which is not a jump node")
                    left[j] = np.asarray(value, dtype=float).reshape(n)
        left[0] = right[0]

        right.setflags(write=False)
        left.setflags(write=False)
        self.grid = grid
        self.samples = right
        self.left = left
        self.interpolation = interpolation
        self._jumps = None

    @classmethod
    def from_arrays(cls, grid: TimeGrid, right: np.ndarray, left: np.ndarray) -> 'History':
        return cls(grid, right, left_limits=left)

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> 'History':
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.m + 1, 1)))

    @classmethod
    def zeros(cls, grid: TimeGrid, n: int) -> 'History':
        return cls(grid, np.zeros((grid.m + 1, n)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[float], Any], n: int,
                      jumps: Iterable[int] = (), left_fn: Optional[Callable[[float], Any]] = None) -> 'History':
        xi = grid.window()
        right = np.array([np.atleast_1d(fn(x)) for x in xi], dtype=float).reshape(grid.m + 1, n)
        left_limits = None
        jumps = list(jumps)
        if left_fn is not None:
            left_limits = {j: np.atleast_1d(left_fn(xi[j])) for j in jumps}
        return cls(grid, right, jumps=jumps, left_limits=left_limits)

    @classmethod
    def from_literal(cls, grid: TimeGrid, literal: Dict[str, Any], n: int) -> 'History':
        """Build from `constant`, `linear {from, to}` or `samples` (+ `jumps`, `left_limits`)."""
        if not isinstance(literal, dict):
            raise HistoryError("history literal must be a table")
        interpolation = literal.get('interpolation', 'linear')
        kinds = [k for k in ('constant', 'linear', 'samples') if k in literal]
        if len(kinds) != 1:
            raise HistoryError("history literal needs exactly one of 'constant', 'linear', 'samples'")
        kind = kinds[0]
        if kind == 'constant':
            value = np.atleast_1d(np.asarray(literal['constant'], dtype=float))
            if value.shape != (n,):
                raise HistoryError(f"constant history must have {n} entries")
            right = np.tile(value, (grid.m + 1, 1))
        elif kind == 'linear':
            spec = literal['linear']
            if not isinstance(spec, dict) or 'from' not in spec or 'to' not in spec:
                raise HistoryError("linear history needs 'from' and 'to'")
            start = np.atleast_1d(np.asarray(spec['from'], dtype=float))
            end = np.atleast_1d(np.asarray(spec['to'], dtype=float))
            if start.shape != (n,) or end.shape != (n,):
                raise HistoryError(f"linear history endpoints must have {n} entries")
            weights = np.linspace(0.0, 1.0, grid.m + 1)[:, None]
            right = (1 - weights) * start + weights * end
        else:
            right = _as_matrix(literal['samples'], grid.m + 1, n, 'samples')
        jumps = literal.get('jumps', [])
        left_limits = literal.get('left_limits')
        if left_limits is not None and not isinstance(left_limits, dict):
            left_limits = dict(zip(jumps, left_limits))
        return cls(grid, right, jumps=jumps, left_limits=left_limits, interpolation=interpolation)

    def to_literal(self) -> Dict[str, Any]:
        literal = {'samples': self.samples.tolist()}
        jumps = sorted(self.jump_nodes)
        if jumps:
            literal['jumps'] = jumps
            literal['left_limits'] = [self.left[j].tolist() for j in jumps]
        return literal

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def jump_nodes(self) -> FrozenSet[int]:
        if self._jumps is None:
            diff = np.any(self.left != self.samples, axis=1)
            self._jumps = frozenset(int(j) for j in np.nonzero(diff)[0])
        return self._jumps

    def at(self, xi: float) -> np.ndarray:
        """Value at xi in [-h, 0]; node values are taken from the right."""
        grid = self.grid
        pos = (xi + grid.h) / grid.delta
        if pos < -_NODE_TOL or pos > grid.m + _NODE_TOL:
            raise HistoryError(f"xi = {xi} outside [-{grid.h}, 0]")
        j = int(math.floor(pos + _NODE_TOL))
        frac = pos - j
        if j >= grid.m or abs(frac) <= _NODE_TOL:
            return self.samples[min(j, grid.m)].copy()
        return (1 - frac) * self.samples[j] + frac * self.left[j + 1]

    def left_limit(self, j: int) -> np.ndarray:
        return self.left[j].copy()

    @property
    def start_value(self) -> np.ndarray:
        """w(-h)."""
        return self.samples[0]

    @property
    def end_left(self) -> np.ndarray:
        """w(0-)."""
        return self.left[-1]

    def norm_l1(self) -> float:
        return norm_l1(self)

    def norm_sup(self) -> float:
        return norm_sup(self)

    def key(self) -> bytes:
        return self.samples.tobytes() + self.left.tobytes()

    def __sub__(self, other: 'History') -> 'History':
        _check_compatible(self, other)
        return History.from_arrays(self.grid, self.samples - other.samples, self.left - other.left)

    def __add__(self, other: 'History') -> 'History':
        _check_compatible(self, other)
        return History.from_arrays(self.grid, self.samples + other.samples, self.left + other.left)

    def scaled(self, factor: float) -> 'History':
        return History.from_arrays(self.grid, factor * self.samples, factor * self.left)

    def refined(self, factor: int = 2) -> 'History':
        """Same function on grid.refined(factor); jumps stay on the old nodes."""
        fine = self.grid.refined(factor)
        weights = np.arange(factor)[:, None] / factor
        right = [(1 - weights) * self.samples[j] + weights * self.left[j + 1] for j in range(self.grid.m)]
        right = np.concatenate(right + [self.samples[-1:]], axis=0)
        left = right.copy()
        left[factor::factor] = self.left[1:]
        return History.from_arrays(fine, right, left)

    def __repr__(self) -> str:
        return f"History(m={self.grid.m}, n={self.n}, jumps={sorted(self.jump_nodes)})"


def _check_compatible(a: History, b: History) -> None:
    if a.grid != b.grid or a.samples.shape != b.samples.shape:
        raise HistoryError("histories live on different grids or dimensions")


def window_norm_l1(right: np.ndarray, left: np.ndarray, delta: float) -> np.ndarray:
    """Trapezoid of ||.|| over node arrays shaped (..., m+1, n)."""
    r = np.linalg.norm(right[..., :-1, :], axis=-1)
    l = np.linalg.norm(left[..., 1:, :], axis=-1)
    return 0.5 * delta * np.sum(r + l, axis=-1)


def norm_l1(w: History) -> float:
    return float(window_norm_l1(w.samples, w.left, w.grid.delta))


def norm_sup(w: History) -> float:
    return float(max(np.max(np.linalg.norm(w.samples, axis=1)), np.max(np.linalg.norm(w.left, axis=1))))


class Trajectory:
    """
    A function on [t - h, theta]: history seed w glued to a forward part.

    Absolute node indices run from k - m (t - h) to N (theta), where k is the
    node of the start time t. `right` and `left` hold node values and left
    limits over that whole range; only nodes up to k can carry jumps.
    """

    __slots__ = ('grid', 'start_index', 'history', 'forward', 'right', 'left',
                 'forward_lipschitz_bound', 'velocities', 'clipped_intervals')

    def __init__(self, grid: TimeGrid, start_index: int, history: History, forward: np.ndarray,
                 velocities: Optional[np.ndarray] = None, clipped_intervals: Sequence[int] = ()):
        m = grid.m
        forward = np.array(forward, dtype=float)
        if forward.ndim == 1:
            forward = forward.reshape(-1, history.n)
        expected = grid.n_intervals - start_index + 1
        if forward.shape != (expected, history.n):
            raise TrajectoryError(f"forward part must have shape {(expected, history.n)}, got {forward.shape}")
        if not np.all(np.isfinite(forward)):
            raise TrajectoryError("forward part contains non-finite values")

        right = np.concatenate([history.samples[:m], forward], axis=0)
        left = np.concatenate([history.left, forward[1:]], axis=0)
        right.setflags(write=False)
        left.setflags(write=False)
        forward.setflags(write=False)

        if len(forward) > 1:
            slopes = np.linalg.norm(np.diff(forward, axis=0), axis=1) / grid.delta
            lip = float(np.max(slopes))
        else:
            lip = 0.0

        self.grid = grid
        self.start_index = start_index
        self.history = history
        self.forward = forward
        self.right = right
        self.left = left
        self.forward_lipschitz_bound = lip
        self.velocities = velocities if velocities is not None else (
            np.diff(forward, axis=0) / grid.delta)
        self.clipped_intervals = tuple(clipped_intervals)

    @property
    def n(self) -> int:
        return self.history.n

    @property
    def start_time(self) -> float:
        return self.grid.node_time(self.start_index)

    @property
    def z(self) -> np.ndarray:
        return self.forward[0]

    @property
    def end_value(self) -> np.ndarray:
        return self.forward[-1]

    def _offset(self, j: int) -> int:
        return j - (self.start_index - self.grid.m)

    def value(self, j: int) -> np.ndarray:
        """x at absolute node j (right value)."""
        return self.right[self._offset(j)]

    def value_at(self, tau: float) -> np.ndarray:
        return self.value(self.grid.node_index(tau))

    def left_value(self, j: int) -> np.ndarray:
        return self.left[self._offset(j)]

    def node_index(self, tau: float) -> int:
        j = self.grid.node_index(tau)
        if j < self.start_index:
            raise TrajectoryError(f"tau = {tau} precedes the start time {self.start_time}")
        return j

    def segment_at(self, j: int) -> History:
        if j < self.start_index or j > self.grid.n_intervals:
            raise TrajectoryError(f"segment node {j} outside [{self.start_index}, {self.grid.n_intervals}]")
        lo = self._offset(j - self.grid.m)
        right = self.right[lo:lo + self.grid.m + 1]
        left = self.left[lo:lo + self.grid.m + 1].copy()
        left[0] = right[0]
        return History.from_arrays(self.grid, right.copy(), left)

    def __sub__(self, other: 'Trajectory') -> 'Trajectory':
        if self.grid != other.grid or self.start_index != other.start_index:
            raise TrajectoryError("trajectories must share grid and start time")
        return Trajectory(self.grid, self.start_index, self.history - other.history,
                          self.forward - other.forward)

    def __repr__(self) -> str:
        return (f"Trajectory(t={self.start_time:.6g}, nodes={len(self.forward)}, "
                f"lipschitz={self.forward_lipschitz_bound:.4g})")


def extend(t: float, z, w: History, forward) -> Trajectory:
    grid = w.grid
    k = grid.node_index(t)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    forward = np.asarray(forward, dtype=float).reshape(-1, w.n)
    if not np.allclose(forward[0], z, rtol=0.0, atol=1e-12):
        raise TrajectoryError(f"forward[0] = {forward[0]} differs from z = {z}")
    return Trajectory(grid, k, w, forward)


def segment(x: Trajectory, tau: float) -> History:
    return x.segment_at(x.node_index(tau))


def extend_linear(t: float, z, w: History, l) -> Trajectory:
    grid = w.grid
    k = grid.node_index(t)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    l = np.atleast_1d(np.asarray(l, dtype=float))
    steps = grid.delta * np.arange(grid.n_intervals - k + 1)
    forward = z[None, :] + steps[:, None] * l[None, :]
    return Trajectory(grid, k, w, forward, velocities=np.tile(l, (len(steps) - 1, 1)))


def point_alpha(z, w: History) -> float:
    """Smallest alpha with (z, w) in P(alpha)."""
    return float(max(np.linalg.norm(np.atleast_1d(z)), norm_sup(w)))
