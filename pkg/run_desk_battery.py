import argparse
import os
import sys
import time
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

# Add project root to sys.path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from delayhjb.config.config import Config
from delayhjb.core.calculus import (chain_rule_check, epsilon_star, hjb_residual, mu_decay_defect,
                                    decay_lambda, mu_functional, mvi_search)
from delayhjb.core.feedback import FeedbackConfig, optimality_gap
from delayhjb.core.functionals import (affine_functional, resolve_functional, scaled, terminal_mismatched,
                                       time_functional, time_shifted)
from delayhjb.core.histories import History, TimeGrid, norm_l1, point_alpha
from delayhjb.core.oracles import semi_lagrangian_oracle, undelayed_box_lq_value
from delayhjb.core.problem import ProblemSpec, check_h3, growth_bounds, hamiltonian
from delayhjb.core.solutions import equivalence_battery, probe_catalog, sample_characteristics, viscosity_check
from delayhjb.core.validators import load_problem
from delayhjb.core.value import (ValueFunctional, ValueQuery, ValueSearchConfig, dpp_residual, value,
                                 value_lipschitz)
from delayhjb.utils.exporter import write_json_report
from delayhjb.utils.logger import get_logger

logger = get_logger("desk_battery")

PROBLEMS_DIR = Config.PROBLEMS_FOLDER
DESK_PROBLEMS = ['linear_delay_desk', 'undelayed_lq']


def _problem(name: str, m: int = None) -> ProblemSpec:
    spec = load_problem(os.path.join(PROBLEMS_DIR, f"{name}.toml"))
    if m is None:
        return spec
    g = spec.grid
    return spec.with_grid(TimeGrid(g.t0, g.theta, g.h, m))


def _unit_point(spec: ProblemSpec) -> Tuple[float, np.ndarray, History]:
    return spec.grid.t0, np.ones(spec.n), History.constant(spec.grid, np.ones(spec.n))


def criterion_dpp(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    spec = _problem('linear_delay_desk', 8 if quick else 16)
    t, z, w = _unit_point(spec)
    query = ValueQuery(t, z, w, ValueSearchConfig(budget=2000 if quick else Config.VALUE_BUDGET))
    N = spec.grid.n_intervals
    nodes = sorted({int(round(v)) for v in np.linspace(0, N, 7)[1:-1]})
    residuals = {f"{spec.grid.node_time(j):g}": dpp_residual(spec, query, spec.grid.node_time(j)) for j in nodes}
    return max(residuals.values()) <= 1e-9, {'residuals': residuals}


def criterion_minimax(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    spec = _problem('linear_delay_desk', 8 if quick else 32)
    t, z, w = _unit_point(spec)
    config = ValueSearchConfig(budget=500 if quick else 5000)
    rho = ValueFunctional(spec, config)
    probes = probe_catalog(spec, t, z, w, count=3 if quick else 10, seed=Config.DEFAULT_SEED,
                           motion=rho.result(t, z, w).trajectory)

    def extras(tt, zz, ww):
        rho.result(tt, zz, ww)
        return rho.argmin_motions(tt, zz, ww)

    settings = dict(s_count=2 if quick else 10, zeta_tol=5e-2, sweeps=0 if quick else 1,
                    family_count=4 if quick else Config.FAMILY_COUNT)
    details: Dict[str, Any] = {}
    solution = equivalence_battery(spec, rho, probes, extras_from=extras, **settings)
    details['value'] = solution.to_dict()
    passed = not solution.refuted
    for candidate in (time_shifted(rho, 0.5, spec.grid.theta), scaled(rho, 1.2), terminal_mismatched(rho, 0.1)):
        report = equivalence_battery(spec, candidate, probes, **settings)
        details[candidate.name] = report.to_dict()
        passed = passed and report.refuted
    return passed, details


def criterion_feedback(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    details: Dict[str, Any] = {}
    passed = True
    for name in DESK_PROBLEMS:
        spec = _problem(name, 8 if quick else 32)
        t, z, w = _unit_point(spec)
        config = ValueSearchConfig(budget=500 if quick else 5000)
        rho = ValueFunctional(spec, config)
        fine_k, coarse_k = (8, 4) if quick else (32, 16)
        fine = optimality_gap(spec, t, z, w, FeedbackConfig(partitions=fine_k), config, phi=rho)
        coarse = optimality_gap(spec, t, z, w, FeedbackConfig(partitions=coarse_k), config, phi=rho)
        ok = fine.relative_gap <= 0.05 and fine.gap <= coarse.gap + 1e-3
        details[name] = {'fine': fine.to_dict(), 'coarse': coarse.to_dict(), 'passed': ok}
        passed = passed and ok
    return passed, details


def criterion_classical(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    spec = _problem('undelayed_lq')
    grid = spec.grid
    phi = resolve_functional('smooth:undelayed_lq', spec)
    rng = np.random.default_rng(Config.DEFAULT_SEED)
    rows = []
    for _ in range(5 if quick else 20):
        j = int(rng.integers(0, grid.n_intervals))
        t = grid.node_time(j)
        z = rng.uniform(-2.0, 2.0, size=1)
        w = History.zeros(grid, 1)
        residual = hjb_residual(spec, phi, t, z, w)
        report = viscosity_check(spec, phi, t, z, w)
        rows.append({'t': t, 'z': float(z[0]), 'residual': residual,
                     'viscosity': report.subsolution_pass and report.supersolution_pass})
    z_grid = np.linspace(-4.0, 4.0, 801)
    oracle = semi_lagrangian_oracle(1.0, z_grid, 200, spec.U)
    inner = np.abs(z_grid) <= 2.0
    closed = np.array([undelayed_box_lq_value(1.0, v) for v in z_grid])
    cross = float(np.max(np.abs(oracle - closed)[inner]))
    passed = all(r['residual'] <= 3e-2 and r['viscosity'] for r in rows) and cross <= 5e-2
    return passed, {'probes': rows, 'semi_lagrangian_gap': cross}


def criterion_mu(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    coarse = _problem('linear_delay_desk', 16)
    fine = _problem('linear_delay_desk', 32)
    count = 10 if quick else 100
    lam = 1.5
    defects = []
    for spec in (coarse, fine):
        t, z, w = _unit_point(spec)
        eps = 0.5 * epsilon_star(spec.grid, lam)
        phi = mu_functional(spec.grid, lam, eps)
        family = sample_characteristics(spec, t, z * 0.5, w, count=count, seed=Config.DEFAULT_SEED)
        defects.append(max(chain_rule_check(spec, phi, x) for x in family.trajectories))
    ratio = defects[0] / max(defects[1], 1e-300)

    spec = fine
    t, z, w = _unit_point(spec)
    lam_decay = decay_lambda(spec, z, w)
    eps_decay = 0.5 * epsilon_star(spec.grid, lam_decay)
    family = sample_characteristics(spec, t, z, w, count=5 if quick else 21, seed=Config.DEFAULT_SEED)
    pairs = [(family.trajectories[i], family.trajectories[i + 1]) for i in range(len(family) - 1)]
    violation = max(mu_decay_defect(spec, lam_decay, eps_decay, x, y) for x, y in pairs)
    passed = 1.7 <= ratio <= 2.3 and violation <= 5 * spec.grid.delta
    return passed, {'chain_rule_defects': defects, 'ratio': ratio, 'decay_defect_max': violation,
                    'lambda': lam_decay, 'eps': eps_decay}


def criterion_convergence(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    details: Dict[str, Any] = {}
    passed = True
    ms = (4, 8, 16) if quick else (8, 16, 32)
    for name in DESK_PROBLEMS + ['logistic_desk']:
        values = []
        for m in ms:
            spec = _problem(name, m)
            t, z, w = _unit_point(spec)
            values.append(value(spec, ValueQuery(t, z, w, ValueSearchConfig(budget=2000))).value)
        diffs = [abs(values[0] - values[1]), abs(values[1] - values[2])]
        ok = diffs[1] < diffs[0]
        details[name] = {'values': values, 'diffs': diffs, 'passed': ok}
        passed = passed and ok

    spec = _problem('linear_delay_desk', 8)
    t, z, w = _unit_point(spec)
    alpha = point_alpha(z, w)
    alpha_x, lambda_x = growth_bounds(spec, alpha)
    family = sample_characteristics(spec, t, z, w, count=20, seed=Config.DEFAULT_SEED)
    violations = sum(1 for x in family.trajectories
                     if np.max(np.linalg.norm(x.right, axis=1)) > alpha_x or x.forward_lipschitz_bound > lambda_x)
    passed = passed and violations == 0

    rng = np.random.default_rng(Config.DEFAULT_SEED)
    bound = value_lipschitz(spec, 0.5)
    config = ValueSearchConfig(budget=300)
    worst_slack = np.inf
    for _ in range(10 if quick else 50):
        z1, z2 = rng.uniform(-0.5, 0.5, size=(2, 1))
        w1 = History(spec.grid, rng.uniform(-0.5, 0.5, size=(spec.grid.m + 1, 1)))
        w2 = History(spec.grid, rng.uniform(-0.5, 0.5, size=(spec.grid.m + 1, 1)))
        gap = abs(value(spec, ValueQuery(t, z1, w1, config)).value - value(spec, ValueQuery(t, z2, w2, config)).value)
        worst_slack = min(worst_slack, bound * (float(np.linalg.norm(z1 - z2)) + norm_l1(w1 - w2)) - gap)
    passed = passed and worst_slack >= 0
    details['bounds'] = {'alpha_X': alpha_x, 'lambda_X': lambda_x, 'violations': violations,
                         'lambda_star': bound, 'worst_slack': float(worst_slack)}
    return passed, details


def criterion_mvi(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    spec = _problem('linear_delay_desk', 8)
    grid = spec.grid
    t, z, w = _unit_point(spec)
    cases = [(time_functional(grid.t0), np.array([[1.0], [-1.0]])),
             (affine_functional(grid.t0), np.array([[0.5], [-0.5]]))]
    details: Dict[str, Any] = {}
    passed = True
    k_sequence = [100.0, 1000.0] if quick else Config.MVI_K_SEQUENCE
    for phi, L in cases:
        report = mvi_search(phi, t, z, w, L, 2 * grid.delta, k_sequence=k_sequence)
        ok = report.final.min_margin > -1e-6
        details[phi.name] = {'min_margin': report.final.min_margin, 'passed': ok}
        passed = passed and ok
    return passed, details


def criterion_hamiltonian(quick: bool) -> Tuple[bool, Dict[str, Any]]:
    rng = np.random.default_rng(Config.DEFAULT_SEED)
    defects = {}
    for name in ['undelayed_lq', 'linear_delay_desk', 'logistic_desk', 'saturated_desk', 'steer_to_zero']:
        spec = _problem(name)
        worst = 0.0
        for _ in range(5 if quick else 20):
            x, y, s = rng.uniform(-2, 2, size=(3, spec.n))
            worst = max(worst, check_h3(spec, spec.grid.t0, x, y, s))
        defects[name] = worst
    spec = _problem('saturated_desk')
    concave_failures = 0
    for _ in range(100 if quick else 1000):
        x, y, s1, s2 = rng.uniform(-2, 2, size=(4, spec.n))
        mid, _ = hamiltonian(spec, 0.0, x, y, 0.5 * (s1 + s2))
        h1, _ = hamiltonian(spec, 0.0, x, y, s1)
        h2, _ = hamiltonian(spec, 0.0, x, y, s2)
        if mid < 0.5 * (h1 + h2) - 1e-12:
            concave_failures += 1
    passed = defects['undelayed_lq'] <= 1e-9 and max(defects.values()) <= 1e-6 and concave_failures == 0
    return passed, {'h3_defects': defects, 'concavity_failures': concave_failures}


CRITERIA: List[Tuple[str, str, Callable[[bool], Tuple[bool, Dict[str, Any]]]]] = [
    ('A1', 'dynamic programming principle', criterion_dpp),
    ('A2', 'minimax characterization', criterion_minimax),
    ('A3', 'feedback optimality', criterion_feedback),
    ('A4', 'classical consistency', criterion_classical),
    ('A5', 'mu calculus', criterion_mu),
    ('A6', 'value convergence and bounds', criterion_convergence),
    ('A7', 'mean value inequality', criterion_mvi),
    ('A8', 'hamiltonian identities', criterion_hamiltonian),
]


def main():
    parser = argparse.ArgumentParser(description="Desk-scale acceptance battery")
    parser.add_argument('--out', default=os.path.join(Config.OUTPUT_FOLDER, 'desk_battery'))
    parser.add_argument('--quick', action='store_true', help='Coarser grids and fewer probes')
    parser.add_argument('--only', nargs='*', default=None, help='Criterion ids to run, e.g. A1 A8')
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    print(f"Running desk battery ({'quick' if args.quick else 'full'}) into {args.out}")
    failures = 0
    for key, title, criterion in CRITERIA:
        if args.only and key not in args.only:
            continue
        started = time.perf_counter()
        try:
            passed, details = criterion(args.quick)
        except Exception as e:
            logger.error(f"{key} crashed: {e}", exc_info=True)
            passed, details = False, {'error': str(e)}
        elapsed = time.perf_counter() - started
        write_json_report(os.path.join(args.out, f"{key}.json"),
                          {'criterion': key, 'title': title, 'passed': passed, 'details': details,
                           'quick': args.quick})
        print(f"[{'OK' if passed else 'FAIL'}] {key} {title} ({elapsed:.1f}s)")
        failures += 0 if passed else 1

    print(f"\nDesk battery complete: {failures} failing criteria.")
    return 0 if failures == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
