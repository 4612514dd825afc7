import glob
import json
import os

import numpy as np
import pytest

from conftest import PROBLEMS_DIR, linear_desk_dict
from delayhjb.core.errors import ConfigError
from delayhjb.core.validators import (dump_problem, load_point, load_problem, point_from_dict, problem_from_dict,
                                      problem_to_dict)

PROBLEM_FILES = sorted(glob.glob(os.path.join(PROBLEMS_DIR, '*.toml')))


@pytest.mark.parametrize('path', PROBLEM_FILES, ids=os.path.basename)
def test_bundled_problems_load(path):
    spec = load_problem(path)
    assert spec.name == os.path.splitext(os.path.basename(path))[0]
    assert len(spec.U) >= 2
    if spec.n == 1:
        t, z, w = load_point(spec, os.path.join(PROBLEMS_DIR, 'points', 'init.toml'))
        np.testing.assert_allclose(z, [1.0])
    else:
        t, z, w = load_point(spec)
    assert t == spec.grid.t0
    assert w.grid == spec.grid


def test_jump_point_file():
    spec = load_problem(os.path.join(PROBLEMS_DIR, 'linear_delay_desk.toml'))
    t, z, w = load_point(spec, os.path.join(PROBLEMS_DIR, 'points', 'jump.toml'))
    assert w.jump_nodes == frozenset({9})
    np.testing.assert_allclose(w.left_limit(9), [0.0])
    np.testing.assert_allclose(w.start_value, [0.0])


def test_jump_point_needs_matching_grid():
    spec = load_problem(os.path.join(PROBLEMS_DIR, 'undelayed_lq.toml'))
    with pytest.raises(ConfigError) as info:
        load_point(spec, os.path.join(PROBLEMS_DIR, 'points', 'jump.toml'))
    assert info.value.key_path == 'point.history'


def _mutated(path, value):
    data = linear_desk_dict()
    table = data
    keys = path.split('.')
    for key in keys[:-1]:
        table = table[key]
    if value is None:
        del table[keys[-1]]
    else:
        table[keys[-1]] = value
    return data


@pytest.mark.parametrize('path, value, key_path', [
    ('grid.theta', None, 'grid.theta'),
    ('grid.m', 2.5, 'grid.m'),
    ('grid.h', 0.3, 'grid'),
    ('dynamics.family', 'chaotic', 'dynamics.family'),
    ('dynamics.A', [[0.0, 1.0]], 'dynamics.A'),
    ('dynamics.B', [[1.0, 0.0], [0.0, 1.0]], 'dynamics.B'),
    ('running.kind', 'cubic', 'running.kind'),
    ('running.R', [[1.0, 0.0], [0.0, 1.0]], 'running.R'),
    ('terminal.Q', 'x', 'terminal.Q'),
    ('control.set', 'ball', 'control.set'),
    ('control.discretization', True, 'control.discretization'),
    ('terminal', None, 'terminal'),
])
def test_malformed_problem_names_the_key(path, value, key_path):
    with pytest.raises(ConfigError) as info:
        problem_from_dict(_mutated(path, value))
    assert info.value.key_path == key_path


def test_infinite_entries_are_rejected():
    data = linear_desk_dict()
    data['dynamics']['B'] = [[float('inf')]]
    with pytest.raises(ConfigError) as info:
        problem_from_dict(data)
    assert info.value.key_path == 'dynamics.B'


@pytest.mark.parametrize('data, key_path', [
    ({'t': 0.1}, 'point.t'),
    ({'t': 1.0}, 'point.t'),
    ({'z': [1.0, 2.0]}, 'point.z'),
    ({'history': {'constant': [1.0, 2.0]}}, 'point.history'),
    ({'history': {'linear': {'from': [0.0]}}}, 'point.history'),
])
def test_malformed_point_names_the_key(linear_spec, data, key_path):
    with pytest.raises(ConfigError) as info:
        point_from_dict(linear_spec, data)
    assert info.value.key_path == key_path


def test_point_defaults(linear_spec):
    t, z, w = load_point(linear_spec)
    assert t == 0.0
    np.testing.assert_allclose(z, [0.0])
    assert w.norm_l1() == 0.0


def test_missing_and_unparseable_files(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_problem(str(tmp_path / 'absent.toml'))
    assert info.value.key_path == '<file>'
    broken = tmp_path / 'broken.toml'
    broken.write_text('[grid\nm = 2\n')
    with pytest.raises(ConfigError):
        load_problem(str(broken))


def test_json_dump_reloads_same_problem(tmp_path, linear_spec):
    path = dump_problem(linear_spec, str(tmp_path / 'desk.json'))
    with open(path, 'r', encoding='utf-8') as f:
        assert json.load(f)['grid']['m'] == 2
    again = load_problem(path)
    assert problem_to_dict(again) == problem_to_dict(linear_spec)
    assert again.c_f == linear_spec.c_f
