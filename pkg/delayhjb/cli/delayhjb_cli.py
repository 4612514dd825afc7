import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

# Add the project root directory to Python path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from delayhjb import __version__
from delayhjb.config.config import Config
from delayhjb.core.calculus import Functional, hjb_residual, mvi_search
from delayhjb.core.errors import ConfigError, DelayHJBError, MVIHypothesisError
from delayhjb.core.feedback import FeedbackConfig, envelope_consistency, optimality_gap
from delayhjb.core.functionals import resolve_functional
from delayhjb.core.histories import History, point_alpha
from delayhjb.core.integrator import ControlSignal, cost, integrate
from delayhjb.core.problem import (ProblemSpec, alpha_star, check_h3, growth_bounds, growth_check,
                                   hamiltonian_lipschitz, lipschitz_bound, lipschitz_check)
from delayhjb.core.run_manager import RunManager, RunManifest, build_manifest, file_sha256
from delayhjb.core.solutions import (Probe, default_s_probes, default_tolerance, deriv_check,
                                     equivalence_battery, minimax_check, probe_catalog,
                                     s_probes, sample_characteristics, viscosity_check)
from delayhjb.core.validators import load_point, load_problem
from delayhjb.core.value import ValueFunctional, ValueQuery, ValueSearchConfig, dpp_residual, value
from delayhjb.utils.exporter import read_table_csv
from delayhjb.utils.logger import DelayHJBLogger, get_logger

if sys.platform == 'win32':
    import io
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8')
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8')

logger = get_logger(__name__)
cli_logger = DelayHJBLogger.get_logger('cli')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REFUTED = 2

# flags that change where or how loudly a run reports, not what it computes
_UNHASHED = ('out', 'verbose', 'debug', 'func', 'problem', 'point', 'command')


@dataclass
class RunContext:
    args: argparse.Namespace
    spec: ProblemSpec
    t: float
    z: np.ndarray
    w: History
    value_config: ValueSearchConfig
    manifest: RunManifest
    runs: RunManager
    run_dir: str


def _configure_logging_level(args):
    log_level = 'DEBUG' if args.debug else ('INFO' if args.verbose else Config.LOG_LEVEL)
    DelayHJBLogger.set_level(log_level)


def _budget(text: str) -> int:
    try:
        budget = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget must be a number, got {text!r}")
    if budget < 1:
        raise argparse.ArgumentTypeError("budget must be at least 1")
    return budget


def _positive_int(text: str) -> int:
    value_ = int(text)
    if value_ < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value_


def _manifest_config(args: argparse.Namespace, value_config: ValueSearchConfig) -> Dict[str, Any]:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _UNHASHED}
    config['value_search'] = value_config.to_dict()
    config['point_hash'] = file_sha256(args.point) if args.point else None
    config['tolerances'] = {'zeta_tol_scale': Config.ZETA_TOL_SCALE, 'membership': Config.MEMBERSHIP_TOLERANCE,
                            'deriv': Config.DERIV_TOLERANCE, 'viscosity': Config.VISCOSITY_TOLERANCE,
                            'terminal': Config.TERMINAL_TOLERANCE}
    config['dir_deriv'] = {'steps': Config.DIR_DERIV_STEPS, 'tail': Config.DIR_DERIV_TAIL}
    return config


def _prepare(args: argparse.Namespace) -> RunContext:
    spec = load_problem(args.problem)
    t, z, w = load_point(spec, args.point)
    value_config = ValueSearchConfig(budget=args.budget or Config.VALUE_BUDGET,
                                     threads=args.threads or Config.THREADS)
    manifest = build_manifest(args.command, args.problem, _manifest_config(args, value_config))
    manifest.config['grid'] = spec.grid.to_dict()
    runs = RunManager(args.out)
    run_dir = runs.start(manifest)
    print(f"[START] {args.command} on '{spec.name}' ({spec.family}, n={spec.n}, m={spec.grid.m}, "
          f"|U_d|={len(spec.U)})")
    return RunContext(args, spec, t, z, w, value_config, manifest, runs, run_dir)


def _functional(ctx: RunContext) -> Functional:
    return resolve_functional(ctx.args.phi, ctx.spec, ctx.value_config)


def _extras_for(phi: Functional):
    if not isinstance(phi, ValueFunctional):
        return None

    def extras(t, z, w):
        phi.result(t, z, w)
        return phi.argmin_motions(t, z, w)

    return extras


def _probes(ctx: RunContext, phi: Functional) -> List[Probe]:
    selector = ctx.args.probes
    if selector == 'point':
        return [Probe(ctx.t, ctx.z, ctx.w, 'point')]
    if selector == 'catalog':
        count = 10
    else:
        try:
            count = int(selector)
        except ValueError:
            raise ConfigError('probes', f"expected 'point', 'catalog' or a count, got {selector!r}")
        if count < 1:
            raise ConfigError('probes', 'count must be positive')
    motion = None
    if isinstance(phi, ValueFunctional):
        motion = phi.result(ctx.t, ctx.z, ctx.w).trajectory
    return probe_catalog(ctx.spec, ctx.t, ctx.z, ctx.w, count=count, seed=ctx.args.seed, motion=motion)


def _parse_control(ctx: RunContext, selector: str) -> ControlSignal:
    spec, t = ctx.spec, ctx.t
    if selector == 'zero':
        return ControlSignal.constant(spec, t, np.zeros(spec.control_dim))
    if selector.startswith('constant:'):
        try:
            u = np.array([float(v) for v in selector[len('constant:'):].split(',')])
        except ValueError:
            raise ConfigError('control', f"malformed constant control {selector!r}")
        if u.shape != (spec.control_dim,):
            raise ConfigError('control', f"constant control needs {spec.control_dim} values")
        return ControlSignal.constant(spec, t, u)
    if not os.path.isfile(selector):
        raise ConfigError('control', f"expected 'zero', 'constant:<values>' or a CSV path, got {selector!r}")
    frame = read_table_csv(selector)
    columns = [f"u{i + 1}" for i in range(spec.control_dim)]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ConfigError('control', f"control CSV lacks columns {missing}")
    values = frame[columns].to_numpy(dtype=float)
    expected = spec.grid.n_intervals - spec.grid.node_index(t)
    if len(values) != expected:
        raise ConfigError('control', f"control CSV needs {expected} rows, got {len(values)}")
    return ControlSignal(spec.grid, spec.grid.node_index(t), values)


def _parse_matrix(text: str, what: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(',')] for row in text.split(';') if row.strip()]
        return np.array(rows, dtype=float)
    except ValueError:
        raise ConfigError(what, f"expected rows like '1,0;0,1', got {text!r}")


def cmd_simulate(ctx: RunContext) -> int:
    u = _parse_control(ctx, ctx.args.control)
    if not u.is_admissible(ctx.spec):
        logger.warning("Control leaves the control set U")
    trajectory, running = integrate(ctx.spec, ctx.t, ctx.z, ctx.w, u)
    total = cost(ctx.spec, trajectory, running)
    ctx.runs.write_trajectory(ctx.run_dir, 'trajectory.csv', trajectory, ctx.manifest, control=u, running=running)
    ctx.runs.write_json(ctx.run_dir, 'cost.json', {'cost': total, 'running': float(running[-1]),
                                                    'terminal': total - float(running[-1])}, ctx.manifest)
    print(f"[OK] Cost {total:.10g}; trajectory written")
    return EXIT_OK


def cmd_value(ctx: RunContext) -> int:
    result = value(ctx.spec, ValueQuery(ctx.t, ctx.z, ctx.w, ctx.value_config))
    trajectory, running = integrate(ctx.spec, ctx.t, ctx.z, ctx.w, result.control)
    payload: Dict[str, Any] = result.to_dict()
    if ctx.args.dpp_tau:
        payload['dpp_residuals'] = {f"{tau:g}": dpp_residual(ctx.spec, ValueQuery(ctx.t, ctx.z, ctx.w, ctx.value_config), tau)
                                    for tau in ctx.args.dpp_tau}
    ctx.runs.write_json(ctx.run_dir, 'value.json', payload, ctx.manifest)
    ctx.runs.write_trajectory(ctx.run_dir, 'argmin_trajectory.csv', trajectory, ctx.manifest,
                              control=result.control, running=running)
    kind = 'exhaustive' if result.exhaustive else 'certified upper bound'
    print(f"[OK] Value {result.value:.10g} ({kind}, {result.sequences_evaluated} sequences)")
    return EXIT_OK


def cmd_synthesize(ctx: RunContext) -> int:
    phi = _functional(ctx)
    nodes = ctx.args.nodes
    config = FeedbackConfig(partitions=ctx.args.partitions, nodes=nodes, shift_source=ctx.args.shift_source,
                            lam=ctx.args.lam, eps=ctx.args.eps, seed=ctx.args.seed)
    report = optimality_gap(ctx.spec, ctx.t, ctx.z, ctx.w, config, ctx.value_config, phi=phi)
    synthesis = report.synthesis
    payload: Dict[str, Any] = {'gap': report.to_dict(), 'synthesis': synthesis.to_dict(), 'config': config.to_dict()}
    if ctx.args.zeta is not None and config.shift_source == 'envelope':
        payload['envelope_defects'] = envelope_consistency(ctx.spec, synthesis, phi, ctx.args.zeta)
    ctx.runs.write_control(ctx.run_dir, 'control.csv', synthesis.control, ctx.manifest)
    ctx.runs.write_trajectory(ctx.run_dir, 'trajectory.csv', synthesis.trajectory, ctx.manifest,
                              control=synthesis.control, running=synthesis.running)
    ctx.runs.write_json(ctx.run_dir, 'gap.json', payload, ctx.manifest)
    print(f"[OK] Synthesized cost {report.synthesized:.10g}, value {report.value:.10g}, "
          f"gap {report.gap:+.4g} ({100 * report.relative_gap:+.2f}%)")
    return EXIT_OK


def _finish(ctx: RunContext, rows: List[Dict[str, Any]], filename: str, refuted: bool, what: str) -> int:
    ctx.runs.write_verdicts(ctx.run_dir, filename, rows, ctx.manifest)
    ctx.runs.finish(ctx.run_dir, ctx.manifest, refuted=refuted)
    failed = sum(1 for r in rows if not r.get('passed', True))
    if refuted:
        print(f"[FAIL] {what}: refuted ({failed} of {len(rows)} verdicts failed)")
        return EXIT_REFUTED
    print(f"[OK] {what}: {len(rows)} verdicts, {failed} approximate-side failures")
    return EXIT_OK


def cmd_check_minimax(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    grid = spec.grid
    phi = _functional(ctx)
    extras_for = _extras_for(phi)
    tol = args.tolerance if args.tolerance is not None else default_tolerance(spec)
    rows: List[Dict[str, Any]] = []
    refuted = False
    for index, probe in enumerate(_probes(ctx, phi)):
        k = grid.node_index(probe.t)
        if k >= grid.n_intervals:
            continue
        extras = extras_for(probe.t, probe.z, probe.w) if extras_for else []
        family = sample_characteristics(spec, probe.t, probe.z, probe.w, eta=args.eta, count=args.family_count,
                                        seed=args.seed + index, extras=extras)
        for s in default_s_probes(phi, probe.t, probe.z, probe.w, args.s_count, args.seed + index):
            for step in args.tau_steps:
                tau = grid.node_time(min(k + step, grid.n_intervals))
                report = minimax_check(spec, phi, probe.t, probe.z, probe.w, tau, s, args.eta, family,
                                       tol=tol, sweeps=args.sweeps)
                refuted = refuted or report.refuted
                rows.append({'probe': index, 'label': probe.label, 't': probe.t, 'tau': tau, 's': report.s,
                             'inf_omega': report.inf_omega, 'sup_omega': report.sup_omega,
                             'inf_member': report.inf_member, 'sup_member': report.sup_member,
                             'upper_pass': report.upper_pass, 'lower_pass': report.lower_pass,
                             'passed': report.upper_pass and report.lower_pass, 'family': family.fingerprint()})
    return _finish(ctx, rows, 'minimax.csv', refuted, f"minimax check of '{phi.name}'")


def cmd_check_derivs(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    phi = _functional(ctx)
    tol = args.tolerance if args.tolerance is not None else Config.DERIV_TOLERANCE
    rows: List[Dict[str, Any]] = []
    refuted = False
    for index, probe in enumerate(_probes(ctx, phi)):
        if spec.grid.node_index(probe.t) >= spec.grid.n_intervals:
            continue
        for s in default_s_probes(phi, probe.t, probe.z, probe.w, args.s_count, args.seed + index):
            report = deriv_check(spec, phi, probe.t, probe.z, probe.w, s, tol=tol)
            refuted = refuted or report.refuted
            rows.append({'probe': index, 'label': probe.label, 't': probe.t, **report.to_dict(),
                         'passed': report.upper_pass and report.lower_pass})
    return _finish(ctx, rows, 'derivs.csv', refuted, f"directional-derivative check of '{phi.name}'")


def cmd_check_viscosity(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    phi = _functional(ctx)
    tol = args.tolerance if args.tolerance is not None else Config.VISCOSITY_TOLERANCE
    rows: List[Dict[str, Any]] = []
    refuted = False
    for index, probe in enumerate(_probes(ctx, phi)):
        if spec.grid.node_index(probe.t) >= spec.grid.n_intervals:
            continue
        report = viscosity_check(spec, phi, probe.t, probe.z, probe.w, tol=tol)
        refuted = refuted or report.refuted
        rows.append({'probe': index, 'label': probe.label, 't': probe.t,
                     'hjb_residual': hjb_residual(spec, phi, probe.t, probe.z, probe.w),
                     'subsolution_pass': report.subsolution_pass, 'supersolution_pass': report.supersolution_pass,
                     'admitted': sum(c['sub_member'] + c['super_member'] for c in report.candidates),
                     'note': report.note, 'passed': report.subsolution_pass and report.supersolution_pass})
    return _finish(ctx, rows, 'viscosity.csv', refuted, f"viscosity check of '{phi.name}'")


def cmd_mvi_search(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    grid = spec.grid
    phi = _functional(ctx)
    L = _parse_matrix(args.directions, 'directions') if args.directions else np.vstack([np.eye(spec.n), -np.eye(spec.n)])
    if L.shape[1] != spec.n:
        raise ConfigError('directions', f"each direction needs {spec.n} components")
    delta = args.delta if args.delta is not None else min(4 * grid.delta, 0.5 * (grid.theta - ctx.t))
    k_sequence = [float(k) for k in args.k_schedule.split(',')] if args.k_schedule else None
    try:
        report = mvi_search(phi, ctx.t, ctx.z, ctx.w, L, delta, k_sequence=k_sequence, seed=args.seed)
    except MVIHypothesisError as e:
        ctx.runs.write_json(ctx.run_dir, 'mvi.json', {'hypothesis': False, 'message': str(e),
                                                      'offending': e.offending}, ctx.manifest)
        print(f"[ERROR] {e}")
        return EXIT_ERROR
    ctx.runs.write_json(ctx.run_dir, 'mvi.json', {'hypothesis': True, **report.to_dict()}, ctx.manifest)
    final = report.final.min_margin
    if report.lambda_phi_estimated:
        print(f"[INFO] lambda_phi estimated by probing: {report.lambda_phi:.4g}")
    print(f"[OK] MVI search: min margin {final:.4g} at k={report.final.k:g}")
    return EXIT_OK


def cmd_bounds(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    alpha = args.alpha if args.alpha is not None else max(point_alpha(ctx.z, ctx.w), 1.0)
    alpha_x, lambda_x = growth_bounds(spec, alpha)
    s_rows = s_probes(spec.n, 8, seed=args.seed)
    h3 = max(check_h3(spec, ctx.t, ctx.z, ctx.w.start_value, s) for s in s_rows)
    payload = {
        'alpha': alpha, 'alpha_star': alpha_star(spec, alpha), 'alpha_X': alpha_x, 'lambda_X': lambda_x,
        'lambda_star': lipschitz_bound(spec, alpha), 'lambda_H': hamiltonian_lipschitz(spec, alpha_x),
        'c_f': spec.c_f, 'h3_defect': h3,
        'growth_ratio': growth_check(spec, alpha, seed=args.seed),
        'lipschitz_ratio': lipschitz_check(spec, alpha, seed=args.seed),
    }
    ctx.runs.write_json(ctx.run_dir, 'bounds.json', payload, ctx.manifest)
    for key in ('alpha_star', 'alpha_X', 'lambda_X', 'lambda_star', 'lambda_H', 'c_f', 'h3_defect'):
        print(f"  {key:>12}: {payload[key]:.6g}")
    print("[OK] Bounds written")
    return EXIT_OK


def cmd_battery(ctx: RunContext) -> int:
    spec, args = ctx.spec, ctx.args
    phi = _functional(ctx)
    report = equivalence_battery(spec, phi, _probes(ctx, phi), s_count=args.s_count, tau_steps=args.tau_steps,
                                 eta=args.eta, family_count=args.family_count, seed=args.seed,
                                 zeta_tol=args.tolerance, sweeps=args.sweeps, extras_from=_extras_for(phi))
    ctx.runs.write_battery(ctx.run_dir, report, ctx.manifest)
    ctx.runs.finish(ctx.run_dir, ctx.manifest, refuted=report.refuted)
    if report.refuted:
        print(f"[FAIL] '{phi.name}' refuted: {len(report.failures())} failed checks")
        return EXIT_REFUTED
    print(f"[OK] '{phi.name}' survives {len(report.rows)} checks")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'value': cmd_value,
    'synthesize': cmd_synthesize,
    'check-minimax': cmd_check_minimax,
    'check-viscosity': cmd_check_viscosity,
    'check-derivs': cmd_check_derivs,
    'mvi-search': cmd_mvi_search,
    'bounds': cmd_bounds,
    'battery': cmd_battery,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('problem', help='Problem file (TOML or JSON)')
    common.add_argument('-v', '--verbose', action='store_true', help='Enable verbose logging')
    common.add_argument('-d', '--debug', action='store_true', help='Enable debug logging')
    common.add_argument('--out', default=Config.OUTPUT_FOLDER, help='Output folder for run directories')
    common.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Seed for every sampled family and probe')
    common.add_argument('--threads', type=_positive_int, default=None, help='Cap on worker threads')
    common.add_argument('--budget', type=_budget, default=None, help='Value-search budget (sequences)')
    common.add_argument('--tolerance', type=float, default=None, help='Override the check tolerance')
    common.add_argument('--point', default=None, help='Point file with t, z and a history literal')

    checks = argparse.ArgumentParser(add_help=False)
    checks.add_argument('--phi', default='value', help="Candidate functional, e.g. value, mu(2,0.01), value|shift=0.5")
    checks.add_argument('--probes', default='catalog', help="'point', 'catalog' or a probe count")
    checks.add_argument('--s-count', type=_positive_int, default=4, help='s vectors per probe')
    checks.add_argument('--tau-steps', type=_positive_int, nargs='+', default=[1, 2], help='tau offsets in grid steps')
    checks.add_argument('--eta', type=float, default=0.0, help='Enlargement of the characteristic inclusion')
    checks.add_argument('--family-count', type=int, default=Config.FAMILY_COUNT, help='Characteristics per probe')
    checks.add_argument('--sweeps', type=int, default=Config.IMPROVE_SWEEPS, help='Coordinate-descent sweeps')

    parser = argparse.ArgumentParser(prog='delayhjb', description="Minimax and viscosity solutions of HJB "
                                                                  "equations for time-delay systems")
    parser.add_argument('--version', action='version', version=f"delayhjb {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='Integrate one control')
    p.add_argument('--control', default='zero', help="'zero', 'constant:<values>' or a control CSV")

    p = sub.add_parser('value', parents=[common], help='Value by block-exhaustive search')
    p.add_argument('--dpp-tau', type=float, nargs='*', default=[], help='Nodes for the DPP residual')

    p = sub.add_parser('synthesize', parents=[common], help='Extremal-shift feedback and optimality gap')
    p.add_argument('--phi', default='value', help='Functional supplying shift vectors')
    p.add_argument('--partitions', type=_positive_int, default=Config.FEEDBACK_PARTITIONS)
    p.add_argument('--nodes', type=float, nargs='*', default=None, help='Explicit partition nodes')
    p.add_argument('--shift-source', choices=Config.SHIFT_SOURCES, default=Config.FEEDBACK_SHIFT_SOURCE)
    p.add_argument('--lam', type=float, default=None, help='mu lambda (envelope mode)')
    p.add_argument('--eps', type=float, default=None, help='mu epsilon (envelope mode)')
    p.add_argument('--zeta', type=float, default=None, help='Report envelope decrease defects for this zeta')

    sub.add_parser('check-minimax', parents=[common, checks], help='Minimax stability over characteristics')
    sub.add_parser('check-viscosity', parents=[common, checks], help='Sub/superdifferential inequalities')
    sub.add_parser('check-derivs', parents=[common, checks], help='Directional-derivative inequalities')
    sub.add_parser('battery', parents=[common, checks], help='All checks at every probe')

    p = sub.add_parser('mvi-search', parents=[common], help='Penalized search for a mean value inequality')
    p.add_argument('--phi', default='value')
    p.add_argument('--directions', default=None, help="Direction set L as rows, e.g. '1;-1'")
    p.add_argument('--delta', type=float, default=None)
    p.add_argument('--k-schedule', default=None, help="Penalty schedule, e.g. '100,1000,10000'")

    p = sub.add_parser('bounds', parents=[common], help='A-priori constants and H3 defect')
    p.add_argument('--alpha', type=float, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    _configure_logging_level(args)

    config_errors = Config.validate_config()
    if config_errors:
        for message in config_errors:
            print(f"[ERROR] config: {message}")
        return EXIT_ERROR

    try:
        ctx = _prepare(args)
        return COMMANDS[args.command](ctx)
    except ConfigError as e:
        print(f"[ERROR] {e.key_path}: {e.detail}")
        return EXIT_ERROR
    except DelayHJBError as e:
        cli_logger.error(f"{args.command} failed: {e}")
        print(f"[ERROR] {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print(f"\n\n[INTERRUPT] Interrupted by user. Exiting.")
        sys.exit(EXIT_ERROR)
    except Exception as e:
        logging.getLogger('delayhjb.cli').critical(f"CLI unexpected error: {e}", exc_info=True)
        print(f"\n[ERROR] Unexpected error. Check logs for details.")
        sys.exit(EXIT_ERROR)
