import csv
import json
from datetime import datetime, timedelta

import numpy as np
import pytest
from conftest import bundled

from nbd import config
from nbd.app import COMMANDS, load_plugins, run
from nbd.coeffs import CoefficientSet
from nbd.measures import MeasureSpec
from nbd.rundata import RunData, digest, format_duration
from nbd.scenario import apply_overrides


def scenario(name):
    return str(config.SCENARIOS_DIR_PATH / f'{name}.json')


def nbd(subcommand, name, tmp_path, *extra):
    return run([subcommand, '--config', scenario(name), '--out-dir', str(tmp_path), *extra])


def read_csv(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


def test_plugins_register_every_subcommand():
    load_plugins()
    assert {'solve', 'evolve', 'spectrum', 'decay', 'mc-compare', 'check'} <= set(COMMANDS)


def test_solve_writes_table_and_manifest(tmp_path):
    assert nbd('solve', 'conservative_1d', tmp_path) == 0
    rows = read_csv(tmp_path / 'conservative_1d.solve.csv')
    assert rows[0] == ['node_x', 'u']
    assert len(rows) == 1 + 31 + 2

    manifest = json.loads((tmp_path / 'conservative_1d.manifest.json').read_text())
    assert manifest['subcommand'] == 'solve'
    assert manifest['resolution'] == 32
    assert manifest['seed'] == 20240611
    assert manifest['parameters']['lambda'] == 1.0
    [output] = manifest['outputs']
    assert output['file'] == 'conservative_1d.solve.csv'
    assert output['sha256'] == digest(tmp_path / output['file'])
    assert manifest['verified'] is True
    scenario = bundled('conservative_1d').scenario
    assert MeasureSpec.from_dict(manifest['measure']) == scenario.measure
    assert CoefficientSet.from_dict(manifest['coefficients'], 1) == scenario.coefficients


def test_manifest_flags_changed_outputs(tmp_path, caplog):
    scenario = bundled('dirichlet_1d').scenario
    data = RunData('dirichlet_1d', tmp_path, 'solve')
    path = data.save_table(['node_x', 'u'], [[0.5, 1.0]])
    assert data.verify()
    path.write_text('node_x,u\n0.5,2\n')
    assert not data.verify()
    manifest = json.loads(data.save_manifest(scenario).read_text())
    assert manifest['verified'] is False
    assert 'changed after they were written' in caplog.text


def test_reruns_are_byte_identical(tmp_path):
    first, second = tmp_path / 'a', tmp_path / 'b'
    assert nbd('solve', 'subprob_2d', first) == 0
    assert nbd('solve', 'subprob_2d', second) == 0
    name = 'subprob_2d.solve.csv'
    assert (first / name).read_bytes() == (second / name).read_bytes()


def test_complex_lambda(tmp_path):
    assert nbd('solve', 'subprob_1d', tmp_path, '--lambda', '1+10j', '--method', 'neumann') == 0
    rows = read_csv(tmp_path / 'subprob_1d.solve.csv')
    assert rows[0] == ['node_x', 'u_re', 'u_im']


def test_singular_lambda_exits_2(tmp_path, caplog):
    assert nbd('solve', 'conservative_1d', tmp_path, '--set', 'solver.lambda=0') == 2
    assert 'SingularAtZero' in caplog.text


def test_malformed_expression_exits_1(tmp_path, caplog):
    assert nbd('solve', 'conservative_1d', tmp_path, '--set', 'coefficients.c0=1+') == 1
    assert 'ExprSyntaxError' in caplog.text
    assert 'at offset 2' in caplog.text


def test_invalid_coefficients_exit_1(tmp_path, caplog):
    assert nbd('solve', 'conservative_1d', tmp_path, '--set', 'coefficients.c0=x') == 1
    assert 'ValidationFailed' in caplog.text


@pytest.mark.parametrize(
    'argv', [
        ['solve'],
        ['integrate', '--config', 'x.json'],
        ['solve', '--config', 'missing.json'],
        ['solve', '--config', scenario('conservative_1d'), '--set', 'no_equals_sign'],
        ['solve', '--config', scenario('conservative_1d'), '--set', 'solver.method=magic'],
        ['solve', '--config', scenario('conservative_1d'), '--set', 'extra.key=1'],
    ]
)
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 1


@pytest.mark.parametrize(
    'override, key', [
        ('domain.n=abc', 'domain.n'),
        ('domain.n=2', 'domain.n'),
        ('solver.tol=tiny', 'solver.tol'),
        ('solver.max_iter=[1]', 'solver.max_iter'),
        ('mc.dt=fast', 'mc.dt'),
        ('mc.n_paths=many', 'mc.n_paths'),
        ('spectral.tol_zero=small', 'spectral.tol_zero'),
        ('domain.pieces=[[0]]', 'domain'),
    ]
)
def test_bad_scenario_values_exit_1(override, key, tmp_path, caplog):
    assert nbd('solve', 'conservative_1d', tmp_path, '--set', override) == 1
    assert 'ConfigError' in caplog.text
    assert key in caplog.text


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        run(['--version'])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == f'nbd {config.VERSION}'


def test_evolve(tmp_path):
    assert nbd('evolve', 'subprob_1d', tmp_path, '--times', '0.1,0.5') == 0
    table = np.loadtxt(tmp_path / 'subprob_1d.evolve.csv', delimiter=',', skiprows=1)
    assert table.shape == (2 * 31, 3)
    early, late = table[:31, 2], table[31:, 2]
    assert np.all(late < early)


def test_evolve_rejects_bad_times(tmp_path):
    assert nbd('evolve', 'subprob_1d', tmp_path, '--times', '0.5,0.1') == 1


def test_spectrum(tmp_path):
    assert nbd('spectrum', 'conservative_1d', tmp_path) == 0
    density = np.loadtxt(tmp_path / 'conservative_1d.spectrum.density.csv', delimiter=',', skiprows=1)
    assert density[:, 1].sum() / 32 == pytest.approx(1)
    data = RunData('conservative_1d', tmp_path, 'spectrum')
    packed = data.load_msgpack('conservative_1d.spectrum.msgpack')
    assert packed['rank_P'] == 1
    assert packed['zero_modes'] == 1
    assert len(packed['eigenvalues']['re']) == 31

    sigma = np.loadtxt(tmp_path / 'conservative_1d.spectrum.singular.csv', delimiter=',', skiprows=1)[:, 1]
    assert len(sigma) == 10
    assert np.all(sigma > 0)
    assert np.all(np.diff(sigma) <= 0)
    np.testing.assert_allclose(packed['singular_values'], sigma)
    results = json.loads((tmp_path / 'conservative_1d.manifest.json').read_text())['results']
    assert results['sv_dt'] == pytest.approx(1 / 32**2)
    np.testing.assert_allclose(results['singular_values'], sigma)


def test_decay(tmp_path):
    assert nbd('decay', 'subprob_1d', tmp_path) == 0
    manifest = json.loads((tmp_path / 'subprob_1d.manifest.json').read_text())
    results = manifest['results']
    rate = -results['spectral_bound']
    assert results['epsilon'] == pytest.approx(rate, rel=0.1)
    assert results['M'] >= 1


def test_check_suite_passes_on_conservative_rod(tmp_path):
    assert nbd('check', 'conservative_1d', tmp_path, '--mc-paths', '500') == 0
    rows = read_csv(tmp_path / 'conservative_1d.check.csv')
    assert rows[0] == ['name', 'status', 'detail']
    statuses = {name: status for name, status, _ in rows[1:]}
    assert 'fail' not in statuses.values()
    assert statuses['spectral.simple_zero'] == 'pass'
    assert statuses['mc.conservative_alive'] == 'pass'


@pytest.mark.parametrize(
    'path', sorted(config.SCENARIOS_DIR_PATH.glob('*.json')), ids=lambda path: path.stem
)
def test_check_passes_on_every_bundled_scenario(path, tmp_path):
    argv = ['check', '--config', str(path), '--out-dir', str(tmp_path), '--mc-paths', '1000']
    assert run(argv) == 0
    rows = read_csv(tmp_path / f'{path.stem}.check.csv')
    assert 'fail' not in {status for _, status, _ in rows[1:]}


def test_check_selection(tmp_path):
    assert nbd('check', 'dirichlet_1d', tmp_path, '--only', 'grid.partition,solver.positivity') == 0
    rows = read_csv(tmp_path / 'dirichlet_1d.check.csv')
    assert [row[0] for row in rows[1:]] == ['grid.partition', 'solver.positivity']
    assert nbd('check', 'dirichlet_1d', tmp_path, '--only', 'no.such.check') == 1


def test_apply_overrides():
    data = {'solver': {'tol': 1e-10}}
    updated = apply_overrides(data, ['solver.tol=1e-12', 'solver.f=x^2', 'evolve.times=[1, 2]'])
    assert updated == {
        'solver': {'tol': 1e-12, 'f': 'x^2'},
        'evolve': {'times': [1, 2]},
    }
    assert data == {'solver': {'tol': 1e-10}}


def test_format_duration():
    start = datetime(2024, 1, 1)
    assert format_duration(start, start + timedelta(hours=1, minutes=2, seconds=3.5)) == '1h 2m 3.500s'
    assert format_duration(start, start + timedelta(seconds=0.25)) == '0.250s'
