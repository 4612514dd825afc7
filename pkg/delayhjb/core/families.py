"""
Built-in dynamics, running-cost and terminal-cost families.

Every family evaluates on arrays with arbitrary leading batch axes so the
integrator and the value search can step many controls at once. Contractions
use np.einsum so a row of a batch is computed exactly like a single call.
Each family states its own growth and Lipschitz constants in closed form.
"""

import math
from typing import Any, Dict, Optional

import numpy as np

from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


def _spectral(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def _norm(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(values * values, axis=-1))


class DynamicsFamily:
    name = 'base'

    def __init__(self, n: int, control_dim: int):
        self.n = n
        self.control_dim = control_dim

    def f(self, t, x, y, u) -> np.ndarray:
        raise NotImplementedError

    def growth(self) -> Dict[str, float]:
        """Coefficients (a_x, a_y, a_u, a_0) with ||f|| <= a_x||x|| + a_y||y|| + a_u||u|| + a_0."""
        raise NotImplementedError

    def lipschitz(self, alpha: float) -> Dict[str, float]:
        """Constants (l_x, l_y) for ||f(x,y) - f(x',y')|| <= l_x||dx|| + l_y||dy|| on the alpha-ball."""
        raise NotImplementedError

    def params(self) -> Dict[str, Any]:
        raise NotImplementedError


class LinearDelay(DynamicsFamily):
    """f = A x + B x(t - h) + C u."""

    name = 'linear_delay'

    def __init__(self, A, B, C):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        super().__init__(self.A.shape[0], self.C.shape[1])

    def f(self, t, x, y, u):
        return (np.einsum('ij,...j->...i', self.A, x) + np.einsum('ij,...j->...i', self.B, y)
                + np.einsum('ij,...j->...i', self.C, u))

    def growth(self):
        return {'x': _spectral(self.A), 'y': _spectral(self.B), 'u': _spectral(self.C), '0': 0.0}

    def lipschitz(self, alpha):
        return {'x': _spectral(self.A), 'y': _spectral(self.B)}

    def params(self):
        return {'A': self.A.tolist(), 'B': self.B.tolist(), 'C': self.C.tolist()}


class ScalarLogisticDelay(DynamicsFamily):
    """f = a x (1 - clip(x(t - h), -y_clip, y_clip)) + u, scalar state and control."""

    name = 'scalar_logistic_delay'

    def __init__(self, a: float, y_clip: float = 2.0):
        self.a = float(a)
        self.y_clip = float(y_clip)
        super().__init__(1, 1)

    def f(self, t, x, y, u):
        return self.a * x * (1.0 - np.clip(y, -self.y_clip, self.y_clip)) + u

    def growth(self):
        return {'x': abs(self.a) * (1.0 + self.y_clip), 'y': 0.0, 'u': 1.0, '0': 0.0}

    def lipschitz(self, alpha):
        return {'x': abs(self.a) * (1.0 + self.y_clip), 'y': abs(self.a) * alpha}

    def params(self):
        return {'a': self.a, 'y_clip': self.y_clip}


class Saturated(DynamicsFamily):
    """f = tanh(A x + B x(t - h)) + C u."""

    name = 'saturated'

    def __init__(self, A, B, C):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        super().__init__(self.A.shape[0], self.C.shape[1])

    def f(self, t, x, y, u):
        inner = np.einsum('ij,...j->...i', self.A, x) + np.einsum('ij,...j->...i', self.B, y)
        return np.tanh(inner) + np.einsum('ij,...j->...i', self.C, u)

    def growth(self):
        return {'x': 0.0, 'y': 0.0, 'u': _spectral(self.C), '0': math.sqrt(self.n)}

    def lipschitz(self, alpha):
        return {'x': _spectral(self.A), 'y': _spectral(self.B)}

    def params(self):
        return {'A': self.A.tolist(), 'B': self.B.tolist(), 'C': self.C.tolist()}


class RunningCost:
    kind = 'base'

    def __init__(self, px: float = 0.0, r0: float = 0.0):
        self.px = float(px)
        self.r0 = float(r0)

    def control_part(self, u) -> np.ndarray:
        raise NotImplementedError

    def control_bound(self, corners: np.ndarray) -> float:
        raise NotImplementedError

    def f0(self, t, x, y, u):
        return self.control_part(u) + self.px * _norm(x) + self.r0

    def params(self) -> Dict[str, Any]:
        raise NotImplementedError


class QuadraticRunningCost(RunningCost):
    kind = 'quadratic'

    def __init__(self, R, px: float = 0.0, r0: float = 0.0):
        super().__init__(px, r0)
        self.R = np.atleast_2d(np.asarray(R, dtype=float))

    def control_part(self, u):
        return np.einsum('...i,ij,...j->...', u, self.R, u)

    def control_bound(self, corners):
        umax = float(np.max(np.linalg.norm(corners, axis=1)))
        return _spectral(self.R) * umax * umax

    def params(self):
        return {'kind': self.kind, 'R': self.R.tolist(), 'px': self.px, 'r0': self.r0}


class AbsRunningCost(RunningCost):
    kind = 'abs'

    def __init__(self, r: float, px: float = 0.0, r0: float = 0.0):
        super().__init__(px, r0)
        self.r = float(r)

    def control_part(self, u):
        return self.r * np.sum(np.abs(u), axis=-1)

    def control_bound(self, corners):
        return abs(self.r) * float(np.max(np.sum(np.abs(corners), axis=1)))

    def params(self):
        return {'kind': self.kind, 'r': self.r, 'px': self.px, 'r0': self.r0}


class TerminalCost:
    kind = 'base'

    def __init__(self, q: float = 0.0):
        self.q = float(q)

    def value(self, z, w_l1) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self, alpha: float) -> float:
        raise NotImplementedError


class QuadraticTerminalCost(TerminalCost):
    """sigma(z, w) = <Qz, z> + q ||w||_1."""

    kind = 'quadratic'

    def __init__(self, Q, q: float = 0.0):
        super().__init__(q)
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))

    def value(self, z, w_l1):
        return np.einsum('...i,ij,...j->...', z, self.Q, z) + self.q * w_l1

    def lipschitz(self, alpha):
        return max(2.0 * _spectral(self.Q) * alpha, abs(self.q))

    def params(self):
        return {'kind': self.kind, 'Q': self.Q.tolist(), 'q': self.q}


class NormTerminalCost(TerminalCost):
    """sigma(z, w) = c ||z|| + q ||w||_1."""

    kind = 'norm'

    def __init__(self, c: float, q: float = 0.0):
        super().__init__(q)
        self.c = float(c)

    def value(self, z, w_l1):
        return self.c * _norm(z) + self.q * w_l1

    def lipschitz(self, alpha):
        return max(abs(self.c), abs(self.q))

    def params(self):
        return {'kind': self.kind, 'c': self.c, 'q': self.q}


DYNAMICS_FAMILIES = {
    LinearDelay.name: LinearDelay,
    ScalarLogisticDelay.name: ScalarLogisticDelay,
    Saturated.name: Saturated,
}

RUNNING_COSTS = {
    QuadraticRunningCost.kind: QuadraticRunningCost,
    AbsRunningCost.kind: AbsRunningCost,
}

TERMINAL_COSTS = {
    QuadraticTerminalCost.kind: QuadraticTerminalCost,
    NormTerminalCost.kind: NormTerminalCost,
}


def growth_constant(family: DynamicsFamily, running: RunningCost, corners: np.ndarray) -> float:
    """Smallest c_f these closed forms certify for ||f|| + |f0| <= c_f(1 + ||x|| + ||y||)."""
    g = family.growth()
    umax = float(np.max(np.linalg.norm(corners, axis=1)))
    constant = g['u'] * umax + g['0'] + running.control_bound(corners) + abs(running.r0)
    return max(g['x'] + abs(running.px), g['y'], constant)


def lipschitz_constant(family: DynamicsFamily, running: RunningCost, alpha: float) -> float:
    lip = family.lipschitz(alpha)
    return max(lip['x'] + abs(running.px), lip['y'])
