"""
Method-of-steps integration of the controlled delay system and of selections
of the characteristic inclusion.

The grid puts every delayed argument tau - h on a node, so the Heun stages
read x(tau_j - h) (node value) and the left limit at tau_{j+1} - h exactly.
Batched rollouts step many piecewise-constant controls at once; a batch of
one is how single trajectories are produced, so both paths share arithmetic.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from delayhjb.core.errors import IntegrationError, TrajectoryError, ValueSearchError
from delayhjb.core.histories import History, TimeGrid, Trajectory, window_norm_l1
from delayhjb.core.problem import ProblemSpec, char_radius
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


class ControlSignal:
    """Piecewise-constant control: one U_d element per grid interval of [t, theta]."""

    __slots__ = ('grid', 'start_index', 'values')

    def __init__(self, grid: TimeGrid, start_index: int, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        expected = grid.n_intervals - start_index
        if values.shape[0] != expected:
            raise TrajectoryError(f"control needs {expected} interval values, got {values.shape[0]}")
        values.setflags(write=False)
        self.grid = grid
        self.start_index = start_index
        self.values = values

    @classmethod
    def constant(cls, spec: ProblemSpec, t: float, u) -> 'ControlSignal':
        k = spec.grid.node_index(t)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(spec.grid, k, np.tile(u, (spec.grid.n_intervals - k, 1)))

    @classmethod
    def from_indices(cls, spec: ProblemSpec, t: float, indices: Sequence[int]) -> 'ControlSignal':
        k = spec.grid.node_index(t)
        return cls(spec.grid, k, spec.U[np.asarray(indices, dtype=int)])

    @property
    def start_time(self) -> float:
        return self.grid.node_time(self.start_index)

    def is_admissible(self, spec: ProblemSpec) -> bool:
        return all(spec.control_set.contains(u) for u in self.values)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ControlSignal) and self.grid == other.grid
                and self.start_index == other.start_index and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"ControlSignal(t={self.start_time:.6g}, intervals={len(self.values)})"


@dataclass
class Selection:
    """Velocity selection l_j per interval; `scale='radius'` reads l_j as a fraction of the admissible radius."""

    grid: TimeGrid
    start_index: int
    values: np.ndarray
    eta: float = 0.0
    scale: str = 'absolute'

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.n_intervals - self.start_index
        if self.values.shape[0] != expected:
            raise TrajectoryError(f"selection needs {expected} interval values, got {self.values.shape[0]}")
        if self.scale not in ('absolute', 'radius'):
            raise TrajectoryError(f"unknown selection scale '{self.scale}'")


class BatchRollout:
    """States and running costs of B controls started from one (t, z, w)."""

    def __init__(self, grid: TimeGrid, start_index: int, history: History, states: np.ndarray, running: np.ndarray):
        self.grid = grid
        self.start_index = start_index
        self.history = history
        self.states = states
        self.running = running
        m = grid.m
        batch = states.shape[0]
        hist_right = np.broadcast_to(history.samples[:m], (batch, m, history.n))
        hist_left = np.broadcast_to(history.left, (batch, m + 1, history.n))
        self.right = np.concatenate([hist_right, states], axis=1)
        self.left = np.concatenate([hist_left, states[:, 1:]], axis=1)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def end_index(self) -> int:
        return self.start_index + self.states.shape[1] - 1

    def window(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Node arrays (B, m+1, n) of the segments at absolute node j."""
        lo = j - self.start_index
        right = self.right[:, lo:lo + self.grid.m + 1]
        left = self.left[:, lo:lo + self.grid.m + 1].copy()
        left[:, 0] = right[:, 0]
        return right, left

    def segment(self, row: int, j: int) -> History:
        right, left = self.window(j)
        return History.from_arrays(self.grid, right[row].copy(), left[row])

    def terminal_costs(self, spec: ProblemSpec) -> np.ndarray:
        right, left = self.window(self.end_index)
        w_l1 = window_norm_l1(right, left, self.grid.delta)
        return spec.sigma_batch(self.states[:, -1], w_l1)

    def total_costs(self, spec: ProblemSpec) -> np.ndarray:
        return self.terminal_costs(spec) + self.running[:, -1]

    def trajectory(self, row: int) -> Trajectory:
        n_steps = self.states.shape[1]
        if self.start_index + n_steps - 1 != self.grid.n_intervals:
            raise TrajectoryError("partial rollouts do not form a trajectory on [t, theta]")
        return Trajectory(self.grid, self.start_index, self.history, self.states[row].copy())


def _heun_step(spec: ProblemSpec, t_a: float, t_b: float, dt: float, x, y_right, y_left, u):
    """One augmented Heun step; returns (next state, running-cost increment)."""
    k1 = spec.f(t_a, x, y_right, u)
    x_trial = x + dt * k1
    k2 = spec.f(t_b, x_trial, y_left, u)
    c1 = spec.f0(t_a, x, y_right, u)
    c2 = spec.f0(t_b, x_trial, y_left, u)
    return x + 0.5 * dt * (k1 + k2), 0.5 * dt * (c1 + c2)


def rollout(spec: ProblemSpec, t: float, z, w: History, controls: np.ndarray) -> BatchRollout:
    """Heun-step controls shaped (B, L, control_dim) over the first L intervals after t."""
    grid = spec.grid
    k = grid.node_index(t)
    m, dt = grid.m, grid.delta
    z = np.atleast_1d(np.asarray(z, dtype=float))
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 2:
        controls = controls[None]
    batch, n_steps = controls.shape[0], controls.shape[1]
    if k + n_steps > grid.n_intervals:
        raise TrajectoryError(f"{n_steps} steps from node {k} overrun theta")

    states = np.empty((batch, n_steps + 1, spec.n))
    running = np.zeros((batch, n_steps + 1))
    states[:, 0] = z
    for j in range(n_steps):
        a = k + j
        y_right = w.samples[j] if j < m else states[:, j - m]
        y_left = w.left[j + 1] if j + 1 <= m else states[:, j + 1 - m]
        states[:, j + 1], increment = _heun_step(spec, grid.node_time(a), grid.node_time(a + 1), dt,
                                                 states[:, j], y_right, y_left, controls[:, j])
        running[:, j + 1] = running[:, j] + increment
        if not np.all(np.isfinite(states[:, j + 1])):
            raise IntegrationError("non-finite state during integration", node=a + 1, time=grid.node_time(a + 1))
    return BatchRollout(grid, k, w, states, running)


def integrate(spec: ProblemSpec, t: float, z, w: History, u: ControlSignal) -> Tuple[Trajectory, np.ndarray]:
    k = spec.grid.node_index(t)
    if u.start_index != k:
        raise TrajectoryError(f"control starts at node {u.start_index}, expected {k}")
    result = rollout(spec, t, z, w, u.values[None])
    return result.trajectory(0), result.running[0]


def _partial_segment(w: History, forward: np.ndarray, j: int) -> History:
    m = w.grid.m
    right = np.concatenate([w.samples[:m], forward], axis=0)[j:j + m + 1]
    left = np.concatenate([w.left, forward[1:]], axis=0)[j:j + m + 1].copy()
    left[0] = right[0]
    return History.from_arrays(w.grid, right.copy(), left)


def integrate_feedback(spec: ProblemSpec, t: float, z, w: History,
                       policy: Callable[[int, np.ndarray, np.ndarray, Callable[[], History]], np.ndarray]
                       ) -> Tuple[ControlSignal, Trajectory, np.ndarray]:
    """
    Closed loop: policy(node, x, delayed x, segment) returns the control held
    over the next interval. The realized control is re-integrated by
    `integrate`, so the returned motion is the open-loop motion of that control.
    """
    grid = spec.grid
    k = grid.node_index(t)
    m, dt = grid.m, grid.delta
    z = np.atleast_1d(np.asarray(z, dtype=float))
    n_steps = grid.n_intervals - k
    states = np.empty((1, n_steps + 1, spec.n))
    states[:, 0] = z
    controls = np.empty((n_steps, spec.control_dim))
    for j in range(n_steps):
        a = k + j
        y_right = w.samples[j] if j < m else states[:, j - m]
        y_left = w.left[j + 1] if j + 1 <= m else states[:, j + 1 - m]
        forward = states[0, :j + 1]
        controls[j] = policy(a, states[0, j].copy(), np.array(y_right).reshape(-1),
                             lambda forward=forward, j=j: _partial_segment(w, forward, j))
        states[:, j + 1], _ = _heun_step(spec, grid.node_time(a), grid.node_time(a + 1), dt,
                                         states[:, j], y_right, y_left, controls[None, j])
        if not np.all(np.isfinite(states[:, j + 1])):
            raise IntegrationError("non-finite state in closed loop", node=a + 1, time=grid.node_time(a + 1))
    control = ControlSignal(grid, k, controls)
    trajectory, running = integrate(spec, t, z, w, control)
    return control, trajectory, running


def cost(spec: ProblemSpec, trajectory: Trajectory, running_cost) -> float:
    running_total = float(np.asarray(running_cost, dtype=float).reshape(-1)[-1])
    final = trajectory.segment_at(spec.grid.n_intervals)
    return spec.sigma(trajectory.end_value, final) + running_total


def integrate_selection(spec: ProblemSpec, t: float, z, w: History, sel: Selection) -> Trajectory:
    grid = spec.grid
    k = grid.node_index(t)
    if sel.start_index != k:
        raise TrajectoryError(f"selection starts at node {sel.start_index}, expected {k}")
    m, dt = grid.m, grid.delta
    z = np.atleast_1d(np.asarray(z, dtype=float))
    n_steps = grid.n_intervals - k
    states = np.empty((n_steps + 1, spec.n))
    velocities = np.empty((n_steps, spec.n))
    states[0] = z
    clipped: List[int] = []
    for j in range(n_steps):
        x = states[j]
        y = w.samples[j] if j < m else states[j - m]
        limit = char_radius(spec, x, y) + sel.eta
        l = sel.values[j] * limit if sel.scale == 'radius' else sel.values[j]
        size = float(np.linalg.norm(l))
        if size > limit * (1.0 + 1e-12):
            l = l * (limit / size)
            clipped.append(k + j)
        velocities[j] = l
        states[j + 1] = x + dt * l
        if not np.all(np.isfinite(states[j + 1])):
            raise IntegrationError("non-finite state along selection", node=k + j + 1, time=grid.node_time(k + j + 1))
    if clipped:
        logger.debug(f"Selection clipped on {len(clipped)} of {n_steps} intervals")
    return Trajectory(grid, k, w, states, velocities=velocities, clipped_intervals=clipped)


def selection_from_motion(x: Trajectory, eta: float = 0.0) -> Selection:
    return Selection(x.grid, x.start_index, np.array(x.velocities, dtype=float), eta=eta)


def required_eta(spec: ProblemSpec, x: Trajectory) -> float:
    """Smallest eta for which every interval slope of x lies in the enlarged ball at the interval start."""
    worst = 0.0
    m = spec.grid.m
    for j, v in enumerate(x.velocities):
        a = x.start_index + j
        excess = float(np.linalg.norm(v)) - char_radius(spec, x.value(a), x.value(a - m))
        worst = max(worst, excess)
    return worst


def index_controls(spec: ProblemSpec, sequences: np.ndarray) -> np.ndarray:
    """Map index sequences (B, L) to control arrays (B, L, control_dim)."""
    sequences = np.asarray(sequences, dtype=int)
    if sequences.size and (sequences.min() < 0 or sequences.max() >= len(spec.U)):
        raise ValueSearchError("control index out of range")
    return spec.U[sequences]
