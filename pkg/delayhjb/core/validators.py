"""
Problem and point files.

A problem file is a TOML (or JSON) key tree with the tables `grid`,
`dynamics`, `running`, `terminal`, `control` and an optional `constants`.
A point file holds `t`, `z` and a `history` literal. Every malformed entry
raises ConfigError carrying the dotted key path of the offending key.
"""

import json
import math
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from delayhjb.core.errors import ConfigError, GridError, HistoryError
from delayhjb.core.families import DYNAMICS_FAMILIES, RUNNING_COSTS, TERMINAL_COSTS
from delayhjb.core.histories import History, TimeGrid
from delayhjb.core.problem import ControlSet, ProblemSpec
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)

_DYNAMICS_KEYS = {
    'linear_delay': ('A', 'B', 'C'),
    'scalar_logistic_delay': ('a',),
    'saturated': ('A', 'B', 'C'),
}
_OPTIONAL_DYNAMICS_KEYS = {'scalar_logistic_delay': ('y_clip',)}
_RUNNING_KEYS = {'quadratic': ('R',), 'abs': ('r',)}
_TERMINAL_KEYS = {'quadratic': ('Q',), 'norm': ('c',)}


class ProblemValidator:

    @staticmethod
    def require_table(data: Dict[str, Any], key: str, path: str = '') -> Dict[str, Any]:
        full = f"{path}.{key}" if path else key
        if key not in data:
            raise ConfigError(full, 'missing table')
        table = data[key]
        if not isinstance(table, dict):
            raise ConfigError(full, 'must be a table')
        return table

    @staticmethod
    def number(table: Dict[str, Any], key: str, path: str, default: Optional[float] = None) -> float:
        full = f"{path}.{key}"
        if key not in table:
            if default is None:
                raise ConfigError(full, 'missing value')
            return float(default)
        value = table[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(full, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(full, 'must be finite')
        return float(value)

    @staticmethod
    def integer(table: Dict[str, Any], key: str, path: str, default: Optional[int] = None) -> int:
        full = f"{path}.{key}"
        if key not in table:
            if default is None:
                raise ConfigError(full, 'missing value')
            return int(default)
        value = table[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(full, f"expected an integer, got {value!r}")
        return value

    @staticmethod
    def array(table: Dict[str, Any], key: str, path: str, ndim: int) -> np.ndarray:
        full = f"{path}.{key}"
        if key not in table:
            raise ConfigError(full, 'missing value')
        try:
            arr = np.asarray(table[key], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(full, 'expected a numeric array')
        if ndim == 2:
            arr = np.atleast_2d(arr)
        elif ndim == 1:
            arr = np.atleast_1d(arr)
        if arr.ndim != ndim:
            raise ConfigError(full, f"expected a {ndim}-dimensional array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError(full, 'entries must be finite')
        return arr

    @staticmethod
    def check_shapes(dynamics: Dict[str, np.ndarray], path: str) -> None:
        A, B, C = dynamics['A'], dynamics['B'], dynamics['C']
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"{path}.A", f"must be square, got shape {A.shape}")
        if B.shape != (n, n):
            raise ConfigError(f"{path}.B", f"must have shape {(n, n)}, got {B.shape}")
        if C.shape[0] != n:
            raise ConfigError(f"{path}.C", f"must have {n} rows, got {C.shape[0]}")


def _grid_from(table: Dict[str, Any]) -> TimeGrid:
    v = ProblemValidator
    try:
        return TimeGrid(v.number(table, 't0', 'grid', 0.0), v.number(table, 'theta', 'grid'),
                        v.number(table, 'h', 'grid'), v.integer(table, 'm', 'grid'))
    except GridError as e:
        raise ConfigError('grid', str(e))


def _dynamics_from(table: Dict[str, Any]):
    name = table.get('family')
    if name not in DYNAMICS_FAMILIES:
        raise ConfigError('dynamics.family', f"unknown family {name!r} (expected one of {sorted(DYNAMICS_FAMILIES)})")
    params = {}
    for key in _DYNAMICS_KEYS[name]:
        if key in ('A', 'B', 'C'):
            params[key] = ProblemValidator.array(table, key, 'dynamics', 2)
        else:
            params[key] = ProblemValidator.number(table, key, 'dynamics')
    for key in _OPTIONAL_DYNAMICS_KEYS.get(name, ()):
        if key in table:
            params[key] = ProblemValidator.number(table, key, 'dynamics')
    if 'A' in params:
        ProblemValidator.check_shapes(params, 'dynamics')
    return DYNAMICS_FAMILIES[name](**params)


def _running_from(table: Dict[str, Any], n_controls: int):
    kind = table.get('kind')
    if kind not in RUNNING_COSTS:
        raise ConfigError('running.kind', f"unknown running cost {kind!r} (expected one of {sorted(RUNNING_COSTS)})")
    params = {'px': ProblemValidator.number(table, 'px', 'running', 0.0),
              'r0': ProblemValidator.number(table, 'r0', 'running', 0.0)}
    if kind == 'quadratic':
        R = ProblemValidator.array(table, 'R', 'running', 2)
        if R.shape != (n_controls, n_controls):
            raise ConfigError('running.R', f"must have shape {(n_controls, n_controls)}, got {R.shape}")
        params['R'] = R
    else:
        params['r'] = ProblemValidator.number(table, 'r', 'running')
    return RUNNING_COSTS[kind](**params)


def _terminal_from(table: Dict[str, Any], n: int):
    kind = table.get('kind')
    if kind not in TERMINAL_COSTS:
        raise ConfigError('terminal.kind', f"unknown terminal cost {kind!r} (expected one of {sorted(TERMINAL_COSTS)})")
    q = ProblemValidator.number(table, 'q', 'terminal', 0.0)
    if kind == 'quadratic':
        Q = ProblemValidator.array(table, 'Q', 'terminal', 2)
        if Q.shape != (n, n):
            raise ConfigError('terminal.Q', f"must have shape {(n, n)}, got {Q.shape}")
        return TERMINAL_COSTS[kind](Q, q=q)
    return TERMINAL_COSTS[kind](ProblemValidator.number(table, 'c', 'terminal'), q=q)


def _control_from(table: Dict[str, Any]) -> ControlSet:
    kind = table.get('set')
    if kind == 'box':
        return ControlSet('box', lower=ProblemValidator.array(table, 'lower', 'control', 1),
                          upper=ProblemValidator.array(table, 'upper', 'control', 1),
                          discretization=ProblemValidator.integer(table, 'discretization', 'control', 5))
    if kind == 'finite':
        return ControlSet('finite', points=ProblemValidator.array(table, 'points', 'control', 2))
    raise ConfigError('control.set', f"unknown control set {kind!r} (expected 'box' or 'finite')")


def problem_from_dict(data: Dict[str, Any], name: Optional[str] = None) -> ProblemSpec:
    if not isinstance(data, dict):
        raise ConfigError('<root>', 'problem file must be a table')
    grid = _grid_from(ProblemValidator.require_table(data, 'grid'))
    dynamics = _dynamics_from(ProblemValidator.require_table(data, 'dynamics'))
    control = _control_from(ProblemValidator.require_table(data, 'control'))
    running = _running_from(ProblemValidator.require_table(data, 'running'), control.dim)
    terminal = _terminal_from(ProblemValidator.require_table(data, 'terminal'), dynamics.n)
    c_f = None
    if 'constants' in data:
        constants = ProblemValidator.require_table(data, 'constants')
        if 'c_f' in constants:
            c_f = ProblemValidator.number(constants, 'c_f', 'constants')
    spec = ProblemSpec(grid, dynamics, running, terminal, control, c_f_override=c_f,
                       name=str(data.get('name', name or 'problem')))
    logger.debug(f"Problem '{spec.name}': {spec.family}, n={spec.n}, |U_d|={len(control)}, m={grid.m}")
    return spec


def problem_to_dict(spec: ProblemSpec) -> Dict[str, Any]:
    data = {
        'name': spec.name,
        'grid': spec.grid.to_dict(),
        'dynamics': {'family': spec.family, **spec.dynamics.params()},
        'running': spec.running.params(),
        'terminal': spec.terminal.params(),
        'control': spec.control_set.to_dict(),
    }
    if spec.c_f_override is not None:
        data['constants'] = {'c_f': spec.c_f_override}
    return data


def _read_tree(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigError('<file>', f"file not found: {path}")
    try:
        if path.lower().endswith('.json'):
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError('<file>', f"cannot parse {os.path.basename(path)}: {e}")


def load_problem(path: str) -> ProblemSpec:
    default_name = os.path.splitext(os.path.basename(path))[0]
    return problem_from_dict(_read_tree(path), name=default_name)


def dump_problem(spec: ProblemSpec, path: str) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(problem_to_dict(spec), f, indent=2, sort_keys=True)
    return path


def point_from_dict(spec: ProblemSpec, data: Dict[str, Any]) -> Tuple[float, np.ndarray, History]:
    grid = spec.grid
    t = ProblemValidator.number(data, 't', 'point', grid.t0)
    try:
        grid.node_index(t)
    except GridError as e:
        raise ConfigError('point.t', str(e))
    if t >= grid.theta:
        raise ConfigError('point.t', f"must precede theta = {grid.theta}")
    if 'z' in data:
        z = ProblemValidator.array(data, 'z', 'point', 1)
        if z.shape != (spec.n,):
            raise ConfigError('point.z', f"must have {spec.n} entries, got {z.shape[0]}")
    else:
        z = np.zeros(spec.n)
    if 'history' in data:
        try:
            w = History.from_literal(grid, data['history'], spec.n)
        except (HistoryError, TypeError, ValueError) as e:
            raise ConfigError('point.history', str(e))
    else:
        w = History.zeros(grid, spec.n)
    return t, z, w


def load_point(spec: ProblemSpec, path: Optional[str] = None) -> Tuple[float, np.ndarray, History]:
    """(t, z, w) from a point file; t = t0, z = 0 and w = 0 when absent."""
    if path is None:
        return point_from_dict(spec, {})
    return point_from_dict(spec, _read_tree(path))
