"""
Named candidate functionals for the checkers, and the constructed
non-solutions used by the equivalence battery.

Names: value, mu(lam,eps), terminal-extended, zero, smooth:time,
smooth:affine, smooth:quadratic, smooth:norm, smooth:undelayed_lq.
Modifiers follow a '|': value|shift=0.5, value|scale=1.2, value|offset=0.1.
"""

import re
from typing import Callable, Dict, Optional

import numpy as np

from delayhjb.core.calculus import Functional, mu_functional
from delayhjb.core.errors import ConfigError, ParameterDomainError
from delayhjb.core.families import NormTerminalCost, QuadraticTerminalCost
from delayhjb.core.oracles import undelayed_box_lq_derivs, undelayed_box_lq_value
from delayhjb.core.histories import TimeGrid
from delayhjb.core.problem import ProblemSpec
from delayhjb.core.value import ValueFunctional, ValueSearchConfig
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)

_MU = re.compile(r'^mu\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$')
_MODIFIER = re.compile(r'^(shift|scale|offset)=(.+)$')


def zero_functional() -> Functional:
    return Functional('zero', lambda t, z, w: 0.0,
                      ci_derivative=lambda t, z, w: 0.0,
                      z_gradient=lambda t, z, w: np.zeros_like(z),
                      lipschitz=lambda alpha: 0.0)


def time_functional(t0: float) -> Functional:
    return Functional('smooth:time', lambda t, z, w: t - t0,
                      ci_derivative=lambda t, z, w: 1.0,
                      z_gradient=lambda t, z, w: np.zeros_like(z),
                      lipschitz=lambda alpha: 0.0)


def affine_functional(t0: float) -> Functional:
    """t - t0 + <z, e1>."""
    def grad(t, z, w):
        g = np.zeros_like(z)
        g[0] = 1.0
        return g

    return Functional('smooth:affine', lambda t, z, w: t - t0 + float(z[0]),
                      ci_derivative=lambda t, z, w: 1.0, z_gradient=grad,
                      lipschitz=lambda alpha: 1.0)


def quadratic_functional() -> Functional:
    return Functional('smooth:quadratic', lambda t, z, w: float(np.dot(z, z)),
                      ci_derivative=lambda t, z, w: 0.0,
                      z_gradient=lambda t, z, w: 2.0 * z,
                      lipschitz=lambda alpha: 2.0 * alpha)


def norm_functional() -> Functional:
    def grad(t, z, w):
        size = float(np.linalg.norm(z))
        return z / size if size > 0 else np.zeros_like(z)

    return Functional('smooth:norm', lambda t, z, w: float(np.linalg.norm(z)),
                      ci_derivative=lambda t, z, w: 0.0, z_gradient=grad,
                      lipschitz=lambda alpha: 1.0)


def undelayed_lq_functional(theta: float) -> Functional:
    """Closed-form value of x' = u, f0 = u^2, sigma = z^2, |u| <= 1; ignores the history."""
    return Functional('smooth:undelayed_lq',
                      lambda t, z, w: undelayed_box_lq_value(theta - t, z[0]),
                      ci_derivative=lambda t, z, w: undelayed_box_lq_derivs(theta - t, z[0])[0],
                      z_gradient=lambda t, z, w: np.array([undelayed_box_lq_derivs(theta - t, z[0])[1]]),
                      lipschitz=lambda alpha: 2.0 * alpha)


def terminal_extended(spec: ProblemSpec) -> Functional:
    """sigma held constant in t."""
    terminal = spec.terminal

    def ci(t, z, w):
        return terminal.q * (float(np.linalg.norm(z)) - float(np.linalg.norm(w.start_value)))

    grad = None
    if isinstance(terminal, QuadraticTerminalCost):
        grad = lambda t, z, w: (terminal.Q + terminal.Q.T) @ z
    elif isinstance(terminal, NormTerminalCost):
        def grad(t, z, w):
            size = float(np.linalg.norm(z))
            return terminal.c * z / size if size > 0 else np.zeros_like(z)
    return Functional('terminal-extended', lambda t, z, w: spec.sigma(z, w),
                      ci_derivative=ci if grad is not None else None, z_gradient=grad,
                      lipschitz=lambda alpha: spec.lambda_sigma(alpha))


def _optional(fn, transform):
    if fn is None:
        return None
    return lambda t, z, w: transform(fn(t, z, w))


def time_shifted(phi: Functional, c: float, theta: float) -> Functional:
    """phi + c (theta - t)."""
    return Functional(f"{phi.name}|shift={c:g}", lambda t, z, w: phi.evaluate(t, z, w) + c * (theta - t),
                      ci_derivative=_optional(phi.ci_derivative, lambda d: d - c),
                      z_gradient=phi.z_gradient, lipschitz=phi.lipschitz)


def scaled(phi: Functional, k: float) -> Functional:
    lip = phi.lipschitz
    return Functional(f"{phi.name}|scale={k:g}", lambda t, z, w: k * phi.evaluate(t, z, w),
                      ci_derivative=_optional(phi.ci_derivative, lambda d: k * d),
                      z_gradient=_optional(phi.z_gradient, lambda g: k * np.asarray(g)),
                      lipschitz=(lambda alpha: abs(k) * lip(alpha)) if lip is not None else None)


def terminal_mismatched(phi: Functional, delta: float) -> Functional:
    """phi + delta; violates the terminal condition by exactly delta."""
    return Functional(f"{phi.name}|offset={delta:g}", lambda t, z, w: phi.evaluate(t, z, w) + delta,
                      ci_derivative=phi.ci_derivative, z_gradient=phi.z_gradient, lipschitz=phi.lipschitz)


SMOOTH_FUNCTIONALS: Dict[str, Callable[[TimeGrid], Functional]] = {
    'smooth:time': lambda grid: time_functional(grid.t0),
    'smooth:affine': lambda grid: affine_functional(grid.t0),
    'smooth:quadratic': lambda grid: quadratic_functional(),
    'smooth:norm': lambda grid: norm_functional(),
    'smooth:undelayed_lq': lambda grid: undelayed_lq_functional(grid.theta),
}


def _base(name: str, spec: ProblemSpec, value_config: Optional[ValueSearchConfig]) -> Functional:
    grid = spec.grid
    if name == 'value':
        return ValueFunctional(spec, value_config)
    if name == 'zero':
        return zero_functional()
    if name == 'terminal-extended':
        return terminal_extended(spec)
    if name in SMOOTH_FUNCTIONALS:
        return SMOOTH_FUNCTIONALS[name](grid)
    match = _MU.match(name)
    if match:
        try:
            lam, eps = float(match.group(1)), float(match.group(2))
            return mu_functional(grid, lam, eps)
        except ValueError:
            raise ConfigError('phi', f"mu parameters must be numbers: '{name}'")
        except ParameterDomainError as e:
            raise ConfigError('phi', str(e))
    raise ConfigError('phi', f"unknown functional '{name}'")


def resolve_functional(name: str, spec: ProblemSpec,
                       value_config: Optional[ValueSearchConfig] = None) -> Functional:
    if not isinstance(name, str) or not name.strip():
        raise ConfigError('phi', 'functional name must be a non-empty string')
    head, *modifiers = [part.strip() for part in name.split('|')]
    phi = _base(head, spec, value_config)
    for modifier in modifiers:
        match = _MODIFIER.match(modifier)
        if not match:
            raise ConfigError('phi', f"malformed modifier '{modifier}' (expected shift=, scale= or offset=)")
        try:
            amount = float(match.group(2))
        except ValueError:
            raise ConfigError('phi', f"modifier '{modifier}' needs a number")
        kind = match.group(1)
        if kind == 'shift':
            phi = time_shifted(phi, amount, spec.grid.theta)
        elif kind == 'scale':
            phi = scaled(phi, amount)
        else:
            phi = terminal_mismatched(phi, amount)
    logger.debug(f"Resolved functional '{name}'")
    return phi
