"""
Nonsmooth calculus on functionals over (t, z, w): right directional
derivatives along linear extensions, sub/superdifferential membership, the
HJB residual, the comparison functional mu with its closed-form
ci-derivatives, the chain rule and decay checks along motions, and the
penalized search behind the mean value inequality.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from delayhjb.config.config import Config
from delayhjb.core.errors import DelayHJBError, MVIHypothesisError, ParameterDomainError
from delayhjb.core.histories import History, TimeGrid, Trajectory, extend_linear, norm_l1, point_alpha
from delayhjb.core.problem import (ProblemSpec, char_radius, growth_bounds, hamiltonian,
                                   hamiltonian_lipschitz)
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


class Functional:
    """A functional phi(t, z, w) with optional closed-form ci-derivative, z-gradient and class-Phi bound."""

    def __init__(self, name: str, evaluate: Callable[[float, np.ndarray, History], float],
                 ci_derivative: Optional[Callable] = None, z_gradient: Optional[Callable] = None,
                 lipschitz: Optional[Callable[[float], float]] = None):
        self.name = name
        self._evaluate = evaluate
        self.ci_derivative = ci_derivative
        self.z_gradient = z_gradient
        self.lipschitz = lipschitz

    def evaluate(self, t: float, z, w: History) -> float:
        return float(self._evaluate(t, np.atleast_1d(np.asarray(z, dtype=float)), w))

    def __call__(self, t: float, z, w: History) -> float:
        return self.evaluate(t, z, w)

    @property
    def has_closed_forms(self) -> bool:
        return self.ci_derivative is not None and self.z_gradient is not None

    def __repr__(self) -> str:
        return f"Functional('{self.name}')"


@dataclass
class DerivativeEstimate:
    lower: float
    upper: float
    steps: List[float]
    quotients: List[float]

    @property
    def finest(self) -> float:
        """Quotient at the smallest step."""
        return self.quotients[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {'lower': self.lower, 'upper': self.upper, 'steps': self.steps, 'quotients': self.quotients}


@dataclass
class MembershipVerdict:
    member: bool
    margin: float
    worst_direction: List[float]
    kind: str = 'sub'

    def to_dict(self) -> Dict[str, Any]:
        return {'member': self.member, 'margin': self.margin, 'worst_direction': self.worst_direction,
                'kind': self.kind}


def default_steps(grid: TimeGrid, t: float, count: int = Config.DIR_DERIV_STEPS) -> List[float]:
    """Decreasing steps delta * 2^j that fit in (0, theta - t]."""
    room = grid.n_intervals - grid.node_index(t)
    multiples = [2 ** j for j in range(count) if 2 ** j <= room]
    return [grid.delta * q for q in sorted(multiples, reverse=True)]


def dir_deriv(phi: Functional, t: float, z, w: History, l, steps: Optional[Sequence[float]] = None,
              tail: int = Config.DIR_DERIV_TAIL) -> DerivativeEstimate:
    grid = w.grid
    steps = default_steps(grid, t) if steps is None else list(steps)
    if not steps:
        raise DelayHJBError(f"no directional derivative steps fit after t = {t}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    k = grid.node_index(t)
    ray = extend_linear(t, z, w, l)
    base = phi.evaluate(t, z, w)
    quotients = []
    for step in steps:
        j = grid.node_index(t + step)
        if j <= k:
            raise DelayHJBError(f"step {step} is not positive")
        quotients.append((phi.evaluate(grid.node_time(j), ray.value(j), ray.segment_at(j)) - base) / step)
    used = quotients[-tail:] if tail > 0 else quotients
    return DerivativeEstimate(lower=float(min(used)), upper=float(max(used)),
                              steps=[float(s) for s in steps], quotients=[float(q) for q in quotients])


def central_gradient(phi: Functional, t: float, z, w: History, step: Optional[float] = None) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if step is None:
        step = math.sqrt(np.finfo(float).eps) * (1.0 + float(np.linalg.norm(z)))
    grad = np.empty_like(z)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = step
        grad[i] = (phi.evaluate(t, z + e, w) - phi.evaluate(t, z - e, w)) / (2.0 * step)
    return grad


def ci_estimate(phi: Functional, t: float, z, w: History) -> float:
    if phi.ci_derivative is not None:
        return float(phi.ci_derivative(t, np.atleast_1d(np.asarray(z, dtype=float)), w))
    return dir_deriv(phi, t, z, w, np.zeros(w.n)).finest


def gradient_estimate(phi: Functional, t: float, z, w: History) -> np.ndarray:
    if phi.z_gradient is not None:
        return np.atleast_1d(np.asarray(phi.z_gradient(t, np.atleast_1d(np.asarray(z, dtype=float)), w), dtype=float))
    return central_gradient(phi, t, z, w)


def sample_directions(spec: ProblemSpec, t: float, z, w: History, count: int = Config.DIRECTION_SAMPLES,
                      seed: int = Config.DEFAULT_SEED, extra: Optional[Sequence] = None) -> np.ndarray:
    """Axis rays at the F-radius, optional extra rays, then random directions inside the ball."""
    n = spec.n
    r = char_radius(spec, z, w.start_value)
    rows = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = r
        rows.extend([e, -e])
    for v in extra or []:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        size = float(np.linalg.norm(v))
        if size > 0:
            rows.append(v * (r / size))
    rng = np.random.default_rng(seed)
    for _ in range(max(0, count - len(rows))):
        d = rng.normal(size=n)
        d /= max(float(np.linalg.norm(d)), 1e-12)
        rows.append(d * r * rng.uniform(0.0, 1.0))
    return np.array(rows)


def subdiff_member(phi: Functional, t: float, z, w: History, p0: float, p, directions,
                   tol: float = Config.MEMBERSHIP_TOLERANCE) -> MembershipVerdict:
    """(p0, p) in D-phi iff p0 + <l, p> <= lower derivative along every sampled l."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    worst, worst_l = math.inf, None
    for l in np.atleast_2d(directions):
        margin = dir_deriv(phi, t, z, w, l).lower - p0 - float(np.dot(l, p))
        if margin < worst:
            worst, worst_l = margin, l
    return MembershipVerdict(worst >= -tol, float(worst), [float(v) for v in worst_l], 'sub')


def superdiff_member(phi: Functional, t: float, z, w: History, p0: float, p, directions,
                     tol: float = Config.MEMBERSHIP_TOLERANCE) -> MembershipVerdict:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    worst, worst_l = math.inf, None
    for l in np.atleast_2d(directions):
        margin = p0 + float(np.dot(l, p)) - dir_deriv(phi, t, z, w, l).upper
        if margin < worst:
            worst, worst_l = margin, l
    return MembershipVerdict(worst >= -tol, float(worst), [float(v) for v in worst_l], 'super')


def hjb_residual(spec: ProblemSpec, phi: Functional, t: float, z, w: History) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ci = ci_estimate(phi, t, z, w)
    grad = gradient_estimate(phi, t, z, w)
    h_value, _ = hamiltonian(spec, t, z, w.start_value, grad)
    return abs(ci + h_value)


def epsilon_star(grid: TimeGrid, lam: float) -> float:
    return math.exp(-2.0 * lam * (grid.theta - grid.t0))


def _check_mu_params(grid: TimeGrid, lam: float, eps: float) -> None:
    if not lam > 1.0:
        raise ParameterDomainError(f"lambda must exceed 1, got {lam}")
    eps_star = epsilon_star(grid, lam)
    if not 0.0 < eps < eps_star:
        raise ParameterDomainError(f"epsilon must lie in (0, {eps_star:.6g}), got {eps}")


def _nu(grid: TimeGrid, lam: float, eps: float, t: float) -> float:
    return (math.exp(-2.0 * lam * (t - grid.t0)) - eps) / eps


def mu_eval(lam: float, eps: float, t: float, z, w: History) -> float:
    grid = w.grid
    _check_mu_params(grid, lam, eps)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    eta = math.sqrt(eps ** 4 + float(np.dot(z, z))) + lam * norm_l1(w)
    return _nu(grid, lam, eps, t) * eta


def mu_derivs(lam: float, eps: float, t: float, z, w: History) -> Tuple[float, np.ndarray]:
    """(ci-derivative, z-gradient) of mu at (t, z, w)."""
    grid = w.grid
    _check_mu_params(grid, lam, eps)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nu = _nu(grid, lam, eps, t)
    root = math.sqrt(eps ** 4 + float(np.dot(z, z)))
    eta = root + lam * norm_l1(w)
    # the history norm gains ||z|| at the front and loses ||w(-h)|| at the back
    ci = -2.0 * lam * (nu + 1.0) * eta + lam * nu * (float(np.linalg.norm(z)) - float(np.linalg.norm(w.start_value)))
    return ci, (nu / root) * z


def mu_gradient(grid: TimeGrid, lam: float, eps: float, t, z) -> np.ndarray:
    """z-gradient of mu; t and z may carry a matching leading batch axis."""
    _check_mu_params(grid, lam, eps)
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    nu = (np.exp(-2.0 * lam * (t - grid.t0)) - eps) / eps
    root = np.sqrt(eps ** 4 + np.sum(z * z, axis=-1))
    return np.asarray(nu / root)[..., None] * z


def mu_functional(grid: TimeGrid, lam: float, eps: float) -> Functional:
    _check_mu_params(grid, lam, eps)
    return Functional(
        f"mu({lam:g},{eps:g})",
        lambda t, z, w: mu_eval(lam, eps, t, z, w),
        ci_derivative=lambda t, z, w: mu_derivs(lam, eps, t, z, w)[0],
        z_gradient=lambda t, z, w: mu_derivs(lam, eps, t, z, w)[1],
        lipschitz=lambda alpha: lam * (1.0 - eps) / eps,
    )


def _omega_along(phi: Functional, p: Trajectory) -> np.ndarray:
    grid = p.grid
    return np.array([phi.evaluate(grid.node_time(j), p.value(j), p.segment_at(j))
                     for j in range(p.start_index, grid.n_intervals + 1)])


def chain_rule_check(spec: ProblemSpec, phi: Functional, p: Trajectory) -> float:
    """Max |central difference of phi along p - (ci-derivative + <p', z-gradient>)| over interior nodes."""
    if not phi.has_closed_forms:
        raise DelayHJBError(f"functional '{phi.name}' has no closed-form derivatives")
    grid = p.grid
    omega = _omega_along(phi, p)
    k, dt = p.start_index, grid.delta
    worst = 0.0
    for j in range(k + 1, grid.n_intervals):
        i = j - k
        lhs = (omega[i + 1] - omega[i - 1]) / (2.0 * dt)
        slope = (p.value(j + 1) - p.value(j - 1)) / (2.0 * dt)
        t_j, z_j, seg = grid.node_time(j), p.value(j), p.segment_at(j)
        rhs = phi.ci_derivative(t_j, z_j, seg) + float(np.dot(slope, phi.z_gradient(t_j, z_j, seg)))
        worst = max(worst, abs(lhs - rhs))
    return worst


def decay_lambda(spec: ProblemSpec, z, w: History) -> float:
    """max(lambda_H at the motion bound of the base point, 1) plus one."""
    alpha = max(point_alpha(z, w), 1e-12)
    alpha_x, _ = growth_bounds(spec, alpha)
    return max(hamiltonian_lipschitz(spec, alpha_x), 1.0) + 1.0


def mu_decay_defect(spec: ProblemSpec, lam: float, eps: float, x: Trajectory, y: Trajectory) -> float:
    """
    Max over interior nodes of [t, min(t + h, theta)] of
    d/dtau mu(p) - <p', s> + |H(x, kappa, s) - H(y, kappa, s)| with p = x - y,
    s = z-gradient of mu at p and kappa the base history read at tau - h.
    """
    grid = spec.grid
    _check_mu_params(grid, lam, eps)
    p = x - y
    k = p.start_index
    end = min(k + grid.m, grid.n_intervals)
    dt = grid.delta
    worst = -math.inf
    for j in range(k + 1, end):
        t_j = grid.node_time(j)
        omega_next = mu_eval(lam, eps, grid.node_time(j + 1), p.value(j + 1), p.segment_at(j + 1))
        omega_prev = mu_eval(lam, eps, grid.node_time(j - 1), p.value(j - 1), p.segment_at(j - 1))
        omega_dot = (omega_next - omega_prev) / (2.0 * dt)
        slope = (p.value(j + 1) - p.value(j - 1)) / (2.0 * dt)
        _, s = mu_derivs(lam, eps, t_j, p.value(j), p.segment_at(j))
        kappa = x.history.samples[j - k]
        h_x, _ = hamiltonian(spec, t_j, x.value(j), kappa, s)
        h_y, _ = hamiltonian(spec, t_j, y.value(j), kappa, s)
        worst = max(worst, omega_dot - float(np.dot(slope, s)) + abs(h_x - h_y))
    if worst == -math.inf:
        raise DelayHJBError("no interior nodes in the first delay interval")
    return worst


def probe_lipschitz(phi: Functional, grid: TimeGrid, n: int, t: float, alpha: float,
                    count: int = 50, seed: int = Config.DEFAULT_SEED) -> float:
    """Empirical class-Phi constant from random pairs in P(alpha)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        z1, z2 = rng.uniform(-alpha, alpha, size=(2, n)) / math.sqrt(n)
        w1 = History(grid, rng.uniform(-alpha, alpha, size=(grid.m + 1, n)) / math.sqrt(n))
        w2 = History(grid, rng.uniform(-alpha, alpha, size=(grid.m + 1, n)) / math.sqrt(n))
        d = float(np.linalg.norm(z1 - z2)) + norm_l1(w1 - w2)
        if d > 1e-12:
            worst = max(worst, abs(phi.evaluate(t, z1, w1) - phi.evaluate(t, z2, w2)) / d)
    logger.warning(f"Lipschitz bound of '{phi.name}' estimated by probing: {worst:.6g}")
    return worst


@dataclass
class MVIStep:
    k: float
    tau: float
    v: List[float]
    g: List[float]
    xi: float
    l: List[float]
    gamma: float
    p0: float
    p: List[float]
    margins: List[float]

    @property
    def min_margin(self) -> float:
        return min(self.margins)

    def to_dict(self) -> Dict[str, Any]:
        return {'k': self.k, 'tau': self.tau, 'v': self.v, 'g': self.g, 'xi': self.xi, 'l': self.l,
                'gamma': self.gamma, 'p0': self.p0, 'p': self.p, 'margins': self.margins,
                'min_margin': self.min_margin}


@dataclass
class MVIReport:
    lower_derivatives: List[float]
    eps_star: float
    lambda_phi: float
    lambda_phi_estimated: bool
    steps: List[MVIStep] = field(default_factory=list)

    @property
    def final(self) -> MVIStep:
        return self.steps[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {'lower_derivatives': self.lower_derivatives, 'eps_star': self.eps_star,
                'lambda_phi': self.lambda_phi, 'lambda_phi_estimated': self.lambda_phi_estimated,
                'steps': [s.to_dict() for s in self.steps]}


def _axis_grid(center: np.ndarray, half: np.ndarray, points: int) -> np.ndarray:
    axes = [np.linspace(c - r, c + r, points) if points > 1 else np.array([c]) for c, r in zip(center, half)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def omega_distance(v, z, L, tau: float, t: float) -> np.ndarray:
    """min over l in L of |v - z - l (tau - t)|, for one v or a stack of them."""
    v = np.asarray(v, dtype=float)
    shifted = z + np.asarray(L, dtype=float) * (tau - t)
    return np.min(np.linalg.norm(v[..., None, :] - shifted, axis=-1), axis=-1)


def mvi_search(phi: Functional, t: float, z, w: History, L, delta: float,
               k_sequence: Optional[Sequence[float]] = None, lambda_phi: Optional[float] = None,
               points_per_axis: int = Config.MVI_POINTS_PER_AXIS, refine_rounds: int = Config.MVI_REFINE_ROUNDS,
               shrink: float = Config.MVI_SHRINK, seed: int = Config.DEFAULT_SEED) -> MVIReport:
    grid = w.grid
    z = np.atleast_1d(np.asarray(z, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    n = len(z)
    k_sequence = list(k_sequence or Config.MVI_K_SEQUENCE)
    k0 = grid.node_index(t)
    if not 0.0 < delta < grid.theta - t:
        raise ParameterDomainError(f"delta must lie in (0, {grid.theta - t}), got {delta}")

    lowers = [dir_deriv(phi, t, z, w, l).lower for l in L]
    offending = [(l.tolist(), d) for l, d in zip(L, lowers) if d <= 0.0]
    if offending:
        raise MVIHypothesisError(f"lower directional derivative is not positive along {len(offending)} "
                                 f"of {len(L)} directions", offending)
    eps_star = 0.49 * min(lowers)

    estimated = False
    if lambda_phi is None:
        alpha = point_alpha(z, w) + delta * float(np.max(np.linalg.norm(L, axis=1))) + delta
        if phi.lipschitz is not None:
            lambda_phi = float(phi.lipschitz(alpha))
        else:
            lambda_phi = probe_lipschitz(phi, grid, n, t, alpha, seed=seed)
            estimated = True

    n_tau = max(1, int(math.floor(delta / grid.delta + 1e-9)))
    tau_nodes = list(range(k0, k0 + n_tau + 1))
    rays = [extend_linear(t, z, w, g) for g in L]
    cache: Dict[Tuple, float] = {}

    def phi_at(j: int, gi: int, v: np.ndarray) -> float:
        key = (j, gi, v.tobytes())
        if key not in cache:
            cache[key] = phi.evaluate(grid.node_time(j), v, rays[gi].segment_at(j))
        return cache[key]

    def gamma(kk: float, j: int, gi: int, v: np.ndarray, xi: float, l: np.ndarray) -> float:
        tau = grid.node_time(j)
        resid = v - z - l * (xi - t)
        return (phi_at(j, gi, v) + kk * float(np.dot(resid, resid)) + kk * (tau - xi) ** 2
                - eps_star * (xi - t))

    reach = delta * float(np.max(np.linalg.norm(L, axis=1))) + delta
    report = MVIReport(lower_derivatives=[float(d) for d in lowers], eps_star=eps_star,
                       lambda_phi=float(lambda_phi), lambda_phi_estimated=estimated)

    for kk in k_sequence:
        v_center, v_half = z.copy(), np.full(n, reach)
        xi_center, xi_half = t + 0.5 * delta, 0.5 * delta
        best = None
        for _ in range(refine_rounds + 1):
            V = np.vstack([_axis_grid(v_center, v_half, points_per_axis), v_center])
            lo, hi = max(t, xi_center - xi_half), min(t + delta, xi_center + xi_half)
            XI = np.linspace(lo, hi, points_per_axis)
            # resid[p, q, r] = v_p - z - l_r (xi_q - t)
            resid = V[:, None, None, :] - z - L[None, None, :, :] * (XI - t)[None, :, None, None]
            penalty = kk * np.sum(resid * resid, axis=-1) - eps_star * (XI - t)[None, :, None]
            for j in tau_nodes:
                tau = grid.node_time(j)
                inside = omega_distance(V, z, L, tau, t) <= delta
                if not inside.any():
                    continue
                time_pen = kk * (tau - XI) ** 2
                for gi in range(len(L)):
                    phis = np.full(len(V), np.inf)
                    phis[inside] = [phi_at(j, gi, v) for v in V[inside]]
                    total = phis[:, None, None] + penalty + time_pen[None, :, None]
                    flat = int(np.argmin(total))
                    pi, qi, ri = np.unravel_index(flat, total.shape)
                    value = float(total[pi, qi, ri])
                    if best is None or value < best[0]:
                        best = (value, j, gi, V[pi].copy(), float(XI[qi]), ri)
            _, _, _, v_center, xi_center, _ = best
            v_half = v_half / shrink
            xi_half = xi_half / shrink

        value, j, gi, v, xi, ri = best
        l = L[ri].copy()
        polished = _polish(lambda vv, xx, ll: gamma(kk, j, gi, vv, xx, ll), v, xi, ri, L, t, delta)
        if (polished is not None and polished[0] < value
                and omega_distance(polished[1], z, L, grid.node_time(j), t) <= delta):
            value, v, xi, l = polished
        tau = grid.node_time(j)
        g = L[gi]
        p0 = -lambda_phi * float(np.linalg.norm(v - z - g * (tau - t))) - 2.0 * kk * (tau - xi)
        p = -2.0 * kk * (v - z - l * (xi - t))
        margins = [float(p0 + np.dot(lg, p)) for lg in L]
        step = MVIStep(k=float(kk), tau=tau, v=v.tolist(), g=g.tolist(), xi=float(xi), l=l.tolist(),
                       gamma=float(value), p0=float(p0), p=p.tolist(), margins=margins)
        report.steps.append(step)
        logger.info(f"MVI k={kk:g}: tau={tau:.6g}, gamma={value:.6g}, min margin={step.min_margin:.6g}")
    return report


def _polish(objective, v: np.ndarray, xi: float, ri: int, L: np.ndarray, t: float, delta: float):
    """Nelder-Mead over (xi, v, softmax weights on L) around a grid incumbent."""
    n, q = len(v), len(L)
    logits = np.full(q, 0.0)
    logits[ri] = math.log(9.0 * max(q - 1, 1)) if q > 1 else 0.0

    def unpack(x):
        xx = float(np.clip(x[0], t, t + delta))
        weights = np.exp(x[1 + n:] - np.max(x[1 + n:]))
        weights /= weights.sum()
        return x[1:1 + n], xx, weights @ L

    def fun(x):
        vv, xx, ll = unpack(x)
        return objective(np.array(vv, dtype=float), xx, ll)

    x0 = np.concatenate([[xi], v, logits])
    try:
        result = minimize(fun, x0, method='Nelder-Mead',
                          options={'xatol': 1e-12, 'fatol': 1e-15, 'maxiter': 6000 * len(x0), 'maxfev': 8000 * len(x0)})
    except (ValueError, FloatingPointError) as e:
        logger.debug(f"Polish failed: {e}")
        return None
    vv, xx, ll = unpack(result.x)
    return float(result.fun), np.array(vv, dtype=float), xx, np.asarray(ll, dtype=float)
