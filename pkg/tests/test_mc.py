import math

import numpy as np
import pytest
from conftest import bundled, delta_rod, rod

from nbd import config
from nbd.exceptions import ConfigError, StartOutsideDomain
from nbd.expr import parse_expr
from nbd.mc import (
    ProcessConfig, _diffusion_factor, _Process, chunk_rng, mc_vs_pde, occupation_histogram,
    pde_value, simulate_ensemble, z_score
)

ONE = parse_expr('1')


def test_process_config():
    cfg = ProcessConfig(1e-3, 1000, 0, chunk_size=300)
    assert cfg.chunks == [(0, 300), (1, 300), (2, 300), (3, 100)]
    for kwargs in ({'dt': 0}, {'n_paths': 0}, {'chunk_size': 0}):
        args = dict(dt=1e-3, n_paths=10, seed=0)
        args.update(kwargs)
        with pytest.raises(ConfigError):
            ProcessConfig(**args)


def test_chunk_streams_depend_only_on_seed_and_chunk():
    assert chunk_rng(1, 0).random() == chunk_rng(1, 0).random()
    assert chunk_rng(1, 0).random() != chunk_rng(1, 1).random()
    assert chunk_rng(1, 0).random() != chunk_rng(2, 0).random()


def test_diffusion_factor():
    a = np.array([[[1.0, 0.5], [0.5, 2.0]], [[3.0, 0.0], [0.0, 0.5]]])
    sigma = _diffusion_factor(a)
    np.testing.assert_allclose(sigma @ np.swapaxes(sigma, 1, 2), 2 * a, atol=1e-12)
    np.testing.assert_allclose(sigma, np.swapaxes(sigma, 1, 2))


def test_conservative_paths_never_die(conservative_rod):
    op = conservative_rod.operator
    cfg = ProcessConfig(1e-4, 1000, seed=42, chunk_size=256)
    estimate = simulate_ensemble(op, cfg, [0.5], 0.05, ONE)
    assert estimate.alive_fraction == 1
    assert estimate.kill_count == 0
    assert estimate.return_count > 0
    assert estimate.mean == 1
    assert estimate.stderr == 0


def test_runs_are_reproducible(subprob_rod, monkeypatch):
    op = subprob_rod.operator
    cfg = ProcessConfig(1e-3, 700, seed=9, chunk_size=128)
    f = parse_expr('x')
    first = simulate_ensemble(op, cfg, [0.3], 0.1, f)
    assert simulate_ensemble(op, cfg, [0.3], 0.1, f) == first

    monkeypatch.setattr(config, 'THREADS', 1)
    assert simulate_ensemble(op, cfg, [0.3], 0.1, f) == first
    monkeypatch.setattr(config, 'THREADS', 5)
    assert simulate_ensemble(op, cfg, [0.3], 0.1, f) == first


def test_bad_starting_points(subprob_rod):
    op = subprob_rod.operator
    cfg = ProcessConfig(1e-3, 10, seed=0)
    for x0 in ([1.5], [0.0], [0.5, 0.5]):
        with pytest.raises(StartOutsideDomain):
            simulate_ensemble(op, cfg, x0, 0.1, ONE)
    with pytest.raises(ConfigError):
        simulate_ensemble(op, cfg, [0.5], 0, ONE)


def test_survival_decreases_in_time(subprob_rod):
    op = subprob_rod.operator
    cfg = ProcessConfig(1e-3, 2000, seed=1)
    early = simulate_ensemble(op, cfg, [0.5], 0.05, ONE)
    late = simulate_ensemble(op, cfg, [0.5], 0.2, ONE)
    assert late.alive_fraction < early.alive_fraction < 1
    assert late.kill_count > early.kill_count


def test_killing_rate_matches_potential():
    op = delta_rod(n=16, c0='-2').operator
    cfg = ProcessConfig(1e-3, 4000, seed=3)
    estimate = simulate_ensemble(op, cfg, [0.5], 0.25, ONE)
    p = math.exp(-0.5)
    assert abs(estimate.alive_fraction - p) < 4 * math.sqrt(p * (1 - p) / cfg.n_paths)


def test_occupation_histogram(conservative_rod):
    op = conservative_rod.operator
    cfg = ProcessConfig(1e-3, 500, seed=0)
    counts = occupation_histogram(op, cfg, [0.25], 0.1)
    assert counts.shape == (op.n,)
    assert counts.min() >= 0
    assert counts.sum() == pytest.approx(1)


def test_z_score():
    assert z_score(1.0, 0.5, 0.0) == 2
    assert z_score(1.0, 0.0, 1.0 + 1e-12) == 0
    assert z_score(1.0, 0.0, 0.5) == math.inf
    assert z_score(0.0, 0.0, 0.5) == -math.inf


def test_exact_comparison_for_constants(conservative_rod):
    op = conservative_rod.operator
    cfg = ProcessConfig(1e-3, 200, seed=0)
    report = mc_vs_pde(op, cfg, [([0.5], 0.05, ONE), ([0.25], 0.1, ONE)])
    assert report.max_abs_z == 0
    assert report.exceedances() == []
    assert report.items[1].x0 == (0.25,)
    assert report.items[0].f == '1.0'
    with pytest.raises(ConfigError):
        mc_vs_pde(op, cfg, [])


def test_absorbed_survival_agrees_with_pde():
    op = rod(n=32).operator
    cfg = ProcessConfig(1e-5, 2000, seed=17)
    estimate = simulate_ensemble(op, cfg, [0.5], 0.05, ONE)
    pde = pde_value(op, [0.5], 0.05, ONE)
    assert 0.7 < pde < 0.85
    assert estimate.kill_count > 0
    assert estimate.return_count == 0
    assert abs(z_score(estimate.mean, estimate.stderr, pde)) < 4


def test_bridge_catches_crossings_between_steps():
    op = rod(n=64).operator
    cfg = ProcessConfig(1e-3, 8000, seed=5)
    estimate = simulate_ensemble(op, cfg, [0.5], 0.05, ONE)
    pde = pde_value(op, [0.5], 0.05, ONE)
    assert abs(z_score(estimate.mean, estimate.stderr, pde)) < 4


def test_returns_near_the_boundary_agree_with_pde():
    op = bundled('conservative_1d').operator
    f = parse_expr('x')
    cfg = ProcessConfig(1e-4, 20000, seed=11)
    estimate = simulate_ensemble(op, cfg, [0.3], 0.02, f)
    assert estimate.return_count > 0
    pde = pde_value(op, [0.3], 0.02, f)
    assert abs(z_score(estimate.mean, estimate.stderr, pde)) < 4


def test_returns_land_in_the_cells_of_measure_nodes():
    on_node = _Process(delta_rod(n=16).operator)
    rows = np.repeat(np.arange(on_node.indptr.size - 1), 2000)
    points = on_node._resample(chunk_rng(0, 0), rows)[:, 0]
    assert np.all(np.abs(points - 0.5) <= 1 / 32)
    assert abs(points.mean() - 0.5) < 0.002

    between = _Process(rod(n=16, measure={
        'regions': [{'select': 'all', 'atoms': [{'at': 0.53125, 'weight': 1.0}]}]
    }).operator)
    points = between._resample(chunk_rng(0, 1), rows)[:, 0]
    assert np.all((points >= 0.5 - 1 / 32) & (points <= 0.5625 + 1 / 32))
    assert abs(np.mean(points < 0.53125) - 0.5) < 0.05
    assert abs(points.mean() - 0.53125) < 0.003
