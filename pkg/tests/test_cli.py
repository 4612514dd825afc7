import glob
import json
import os

import pytest

from delayhjb.cli.delayhjb_cli import EXIT_ERROR, EXIT_OK, EXIT_REFUTED, build_parser, main
from delayhjb.utils.exporter import read_table_csv


def _run_dir(out, command):
    found = glob.glob(os.path.join(str(out), f"{command}_*"))
    assert len(found) == 1
    return found[0]


def _load(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def test_value_command(tmp_path, lq_problem_file, capsys):
    point = tmp_path / 'point.toml'
    point.write_text('t = 0.0\nz = [1.0]\n')
    code = main(['value', lq_problem_file, '--out', str(tmp_path), '--point', str(point), '--dpp-tau', '0.5'])
    assert code == EXIT_OK
    assert '[OK] Value 0.5' in capsys.readouterr().out
    run_dir = _run_dir(tmp_path, 'value')
    payload = _load(os.path.join(run_dir, 'value.json'))
    assert payload['value'] == pytest.approx(0.5)
    assert payload['exhaustive'] is True
    assert payload['dpp_residuals']['0.5'] <= 1e-9
    assert payload['manifest']['command'] == 'value'
    frame = read_table_csv(os.path.join(run_dir, 'argmin_trajectory.csv'))
    assert frame['x1'].iloc[-1] == pytest.approx(0.5)


def test_simulate_constant_control(tmp_path, lq_problem_file):
    code = main(['simulate', lq_problem_file, '--out', str(tmp_path), '--control', 'constant:0.5'])
    assert code == EXIT_OK
    payload = _load(os.path.join(_run_dir(tmp_path, 'simulate'), 'cost.json'))
    assert payload['cost'] == pytest.approx(0.5)
    assert payload['running'] == pytest.approx(0.25)


def test_simulate_rejects_bad_control(tmp_path, lq_problem_file, capsys):
    code = main(['simulate', lq_problem_file, '--out', str(tmp_path), '--control', 'constant:1,2'])
    assert code == EXIT_ERROR
    assert '[ERROR] control' in capsys.readouterr().out


def test_bounds_command(tmp_path, linear_problem_file):
    assert main(['bounds', linear_problem_file, '--out', str(tmp_path)]) == EXIT_OK
    payload = _load(os.path.join(_run_dir(tmp_path, 'bounds'), 'bounds.json'))
    assert payload['c_f'] == pytest.approx(2.0)
    assert payload['h3_defect'] <= 1e-9
    assert payload['alpha_X'] > payload['alpha']


def test_same_arguments_reuse_run_directory(tmp_path, linear_problem_file):
    main(['bounds', linear_problem_file, '--out', str(tmp_path)])
    main(['bounds', linear_problem_file, '--out', str(tmp_path), '--verbose'])
    assert len(glob.glob(os.path.join(str(tmp_path), 'bounds_*'))) == 1
    main(['bounds', linear_problem_file, '--out', str(tmp_path), '--alpha', '2'])
    assert len(glob.glob(os.path.join(str(tmp_path), 'bounds_*'))) == 2


def test_missing_problem_file(tmp_path, capsys):
    code = main(['value', str(tmp_path / 'absent.toml'), '--out', str(tmp_path)])
    assert code == EXIT_ERROR
    assert '[ERROR] <file>' in capsys.readouterr().out


def test_parser_exits_map_to_codes(capsys):
    assert main(['explode']) == EXIT_ERROR
    assert main(['--version']) == EXIT_OK
    assert 'delayhjb' in capsys.readouterr().out


def test_parser_defaults():
    args = build_parser().parse_args(['battery', 'desk.toml'])
    assert args.phi == 'value'
    assert args.probes == 'catalog'
    assert args.tau_steps == [1, 2]


def test_battery_refutes_terminal_offset(tmp_path, lq_problem_file, capsys):
    code = main(['battery', lq_problem_file, '--out', str(tmp_path), '--phi', 'smooth:undelayed_lq|offset=0.1',
                 '--probes', 'point', '--s-count', '1', '--tau-steps', '1', '--sweeps', '0'])
    assert code == EXIT_REFUTED
    assert '[FAIL]' in capsys.readouterr().out
    run_dir = _run_dir(tmp_path, 'battery')
    assert _load(os.path.join(run_dir, 'battery.json'))['refuted'] is True
    rows = read_table_csv(os.path.join(run_dir, 'battery_rows.csv'))
    terminal = rows[rows['check'] == 'terminal']
    assert not terminal['passed'].iloc[0]


def test_check_derivs_accepts_closed_form(tmp_path, lq_problem_file):
    code = main(['check-derivs', lq_problem_file, '--out', str(tmp_path), '--phi', 'smooth:undelayed_lq',
                 '--probes', '4', '--s-count', '2'])
    assert code == EXIT_OK
    rows = read_table_csv(os.path.join(_run_dir(tmp_path, 'check-derivs'), 'derivs.csv'))
    assert rows['lower_pass'].all()


def test_unknown_functional_is_a_config_error(tmp_path, lq_problem_file, capsys):
    code = main(['check-viscosity', lq_problem_file, '--out', str(tmp_path), '--phi', 'nope', '--probes', 'point'])
    assert code == EXIT_ERROR
    assert '[ERROR] phi' in capsys.readouterr().out


def test_mvi_search_reports_failed_hypothesis(tmp_path, lq_problem_file):
    code = main(['mvi-search', lq_problem_file, '--out', str(tmp_path), '--phi', 'zero'])
    assert code == EXIT_ERROR
    payload = _load(os.path.join(_run_dir(tmp_path, 'mvi-search'), 'mvi.json'))
    assert payload['hypothesis'] is False
    assert len(payload['offending']) == 2


def test_mvi_search_on_increasing_functional(tmp_path, lq_problem_file):
    code = main(['mvi-search', lq_problem_file, '--out', str(tmp_path), '--phi', 'smooth:time',
                 '--k-schedule', '100,1000'])
    assert code == EXIT_OK
    payload = _load(os.path.join(_run_dir(tmp_path, 'mvi-search'), 'mvi.json'))
    assert payload['hypothesis'] is True
    assert len(payload['steps']) == 2
