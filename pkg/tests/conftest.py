import os
import sys
import tempfile

# Config reads the environment at import time
_SESSION_DIR = tempfile.mkdtemp(prefix='delayhjb_tests_')
os.environ.setdefault('DELAYHJB_LOG_TO_FILE', 'false')
os.environ.setdefault('DELAYHJB_LOG_LEVEL', 'WARNING')
os.environ.setdefault('DELAYHJB_OUTPUT_FOLDER', os.path.join(_SESSION_DIR, 'runs'))

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from delayhjb.core.histories import History
from delayhjb.core.validators import dump_problem, problem_from_dict

PROBLEMS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'problems')


def linear_desk_dict(m=2, discretization=3):
    """x' = x(t - h) + u, f0 = u^2, sigma = z^2 on [0, 1] with h = 0.5."""
    return {
        'name': 'linear_desk',
        'grid': {'t0': 0.0, 'theta': 1.0, 'h': 0.5, 'm': m},
        'dynamics': {'family': 'linear_delay', 'A': [[0.0]], 'B': [[1.0]], 'C': [[1.0]]},
        'running': {'kind': 'quadratic', 'R': [[1.0]]},
        'terminal': {'kind': 'quadratic', 'Q': [[1.0]]},
        'control': {'set': 'box', 'lower': [-1.0], 'upper': [1.0], 'discretization': discretization},
    }


def undelayed_lq_dict(m=2, discretization=9):
    data = linear_desk_dict(m, discretization)
    data['name'] = 'undelayed_lq'
    data['dynamics']['B'] = [[0.0]]
    return data


@pytest.fixture
def linear_spec():
    return problem_from_dict(linear_desk_dict())


@pytest.fixture
def lq_spec():
    return problem_from_dict(undelayed_lq_dict())


@pytest.fixture
def unit_point(linear_spec):
    grid = linear_spec.grid
    return grid.t0, np.ones(1), History.constant(grid, np.ones(1))


@pytest.fixture
def lq_problem_file(tmp_path, lq_spec):
    return dump_problem(lq_spec, str(tmp_path / 'undelayed_lq.json'))


@pytest.fixture
def linear_problem_file(tmp_path, linear_spec):
    return dump_problem(linear_spec, str(tmp_path / 'linear_desk.json'))
