"""
Independent oracles: the closed-form value of the undelayed box-constrained
LQ problem (x' = u, f0 = u^2, sigma = z^2, |u| <= 1), a backward
semi-Lagrangian solver of the same problem, and a finer quadrature of the
running cost of a control.
"""

from typing import Tuple

import numpy as np
from scipy.integrate import simpson

from delayhjb.core.histories import History
from delayhjb.core.integrator import ControlSignal, integrate
from delayhjb.core.problem import ProblemSpec
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


def undelayed_box_lq_value(tau_to_go: float, z: float) -> float:
    T = float(tau_to_go)
    a = abs(float(z))
    if a <= 1.0 + T:
        return a * a / (1.0 + T)
    return T + (a - T) ** 2


def undelayed_box_lq_derivs(tau_to_go: float, z: float) -> Tuple[float, float]:
    """(d/dt, d/dz) of the value, t being the current time (so d/dt = -d/dT)."""
    T = float(tau_to_go)
    z = float(z)
    a = abs(z)
    if a <= 1.0 + T:
        return z * z / (1.0 + T) ** 2, 2.0 * z / (1.0 + T)
    return 2.0 * (a - T) - 1.0, 2.0 * np.sign(z) * (a - T)


def semi_lagrangian_oracle(horizon: float, z_grid: np.ndarray, n_steps: int,
                           controls: np.ndarray) -> np.ndarray:
    """Value at time-to-go `horizon` on z_grid by backward semi-Lagrangian steps over the given controls."""
    z_grid = np.asarray(z_grid, dtype=float)
    controls = np.asarray(controls, dtype=float).reshape(-1)
    dt = horizon / n_steps
    values = z_grid ** 2
    for _ in range(n_steps):
        # candidates[i, c]: arrive from z_i with control c
        targets = z_grid[:, None] + dt * controls[None, :]
        candidates = dt * controls[None, :] ** 2 + np.interp(targets, z_grid, values)
        values = np.min(candidates, axis=1)
    return values


def quadrature_cost_oracle(spec: ProblemSpec, t: float, z, w: History, u: ControlSignal,
                           factor: int = 2) -> float:
    """Running cost of u recomputed on the refined grid with Simpson's rule per coarse interval."""
    fine_spec = spec.with_grid(spec.grid.refined(factor))
    fine_w = w.refined(factor)
    fine_u = ControlSignal(fine_spec.grid, u.start_index * factor, np.repeat(u.values, factor, axis=0))
    x, _ = integrate(fine_spec, t, z, fine_w, fine_u)
    grid = fine_spec.grid
    m = grid.m
    total = 0.0
    for j, control in enumerate(u.values):
        nodes = [x.start_index + factor * j + i for i in range(factor + 1)]
        values = []
        for position, a in enumerate(nodes):
            delayed = x.left_value(a - m) if position == factor else x.value(a - m)
            values.append(float(spec.f0(grid.node_time(a), x.value(a), delayed, control)))
        total += float(simpson(values, dx=grid.delta))
    return total
