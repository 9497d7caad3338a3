""" 端到端验收：内置场景上的收敛、守恒、谱和蒙特卡罗交叉检验
"""
import numpy as np
import pytest
from conftest import bundled, delta_rod

from nbd.mc import ProcessConfig, mc_vs_pde, occupation_histogram
from nbd.measures import MeasureMatrix
from nbd.solver import (
    EvolveRequest, ResolventRequest, domination_check, evolve, holomorphic_bound_scan, resolvent
)
from nbd.spectral import (
    decay_fit, eigen_spectrum, invariant_density, spectral_projection, total_variation
)

SIX = [
    'dirichlet_1d', 'subprob_1d', 'conservative_1d',
    'dirichlet_2d', 'subprob_2d', 'conservative_2d',
]


@pytest.mark.parametrize('name', SIX)
def test_positive_contraction(name):
    problem = bundled(name)
    op = problem.operator
    rng = np.random.default_rng(0)
    for lam in (0.5, 1.0, 5.0, 50.0):
        for _ in range(5):
            f = rng.uniform(-1, 1, op.n)
            u = lam * resolvent(op, ResolventRequest(lam, f))
            assert np.abs(u).max() <= np.abs(f).max() + 1e-10
            g = np.abs(f)
            assert resolvent(op, ResolventRequest(lam, g)).min() >= -1e-12


@pytest.mark.parametrize('name', SIX)
def test_three_methods_agree(name):
    problem = bundled(name)
    op = problem.operator
    f = np.random.default_rng(1).uniform(0, 1, op.n)
    for lam in (0.5, 1 + 10j, 2 - 3j):
        direct = resolvent(op, ResolventRequest(lam, f))
        for method in ('neumann', 'boundary_reduced'):
            other = resolvent(op, ResolventRequest(lam, f, method, tol=1e-10))
            assert np.abs(other - direct).max() <= 1e-7 * max(1.0, np.abs(direct).max())


@pytest.mark.parametrize('name', ['conservative_1d', 'conservative_2d'])
def test_conservation(name):
    op = bundled(name).operator
    ones = np.ones(op.n)
    assert np.abs(op.matrix @ ones).max() <= 1e-12 * np.abs(op.matrix.diagonal()).max()
    for lam in (1.0, 10.0):
        np.testing.assert_allclose(lam * resolvent(op, ResolventRequest(lam, ones)), 1, atol=1e-10)
    for t in (0.1, 1.0, 10.0):
        np.testing.assert_allclose(evolve(op, EvolveRequest(ones, t, dt=t / 100)), 1, atol=1e-10)


@pytest.mark.parametrize('name', ['subprob_1d', 'conservative_1d'])
def test_decay_rate(name):
    op = bundled(name).operator
    spec = spectral_projection(op, eigen_spectrum(op))
    rate = spec.gap if spec.rank_P else -spec.spectral_bound
    u0 = bundled(name).interior_vector('x + 0.5')
    fit = decay_fit(op, spec.P, u0, np.linspace(0.5, 6, 8) / rate)
    assert abs(fit.epsilon - rate) <= 0.1 * rate
    assert np.all(np.diff(fit.distances[4:]) < 0)


def test_asymptotic_profile():
    problem = delta_rod(n=128)
    op = problem.operator
    spec = spectral_projection(op, eigen_spectrum(op))
    cell = problem.grid.cell_volume
    T = 20 / spec.gap
    rng = np.random.default_rng(2)
    for _ in range(3):
        f = rng.uniform(0, 1, op.n)
        u = evolve(op, EvolveRequest(f, T, dt=T / 2000))
        assert np.abs(u - np.sum(f * spec.h) * cell).max() < 1e-4


def test_two_components():
    problem = bundled('two_components_1d')
    op = problem.operator
    spec = spectral_projection(op, eigen_spectrum(op))
    assert spec.rank_P == 2
    left = problem.grid.interior_coords[:, 0] < 0.5
    assert np.abs(spec.P[np.ix_(left, ~left)]).max() < 1e-8
    assert np.abs(spec.P[np.ix_(~left, left)]).max() < 1e-8


def test_domination():
    problem = bundled('conservative_1d')
    d, m = problem.dirichlet, problem.measure
    f = np.random.default_rng(3).uniform(0, 1, problem.operator.n)
    pairs = [
        (MeasureMatrix.zero(problem.grid), m),
        (MeasureMatrix(0.25 * m.matrix, 0.25 * m.masses), MeasureMatrix(0.75 * m.matrix, 0.75 * m.masses)),
        (m, m),
    ]
    for m1, m2 in pairs:
        assert domination_check(d, m1, m2, 1.0, f).holds


def test_resolvent_bound_scan():
    op = bundled('dirichlet_1d').operator
    samples = [0.5 + 1j * y for y in np.linspace(-50, 50, 17)] + [1, 10, 100]
    scan = holomorphic_bound_scan(op, 0.5, samples)
    assert np.all(np.isfinite(scan.values))
    assert np.all(scan.values[-3:] <= 1 + 1e-10)


@pytest.mark.slow
def test_monte_carlo_bridge():
    problem = bundled('conservative_1d')
    scenario = problem.scenario
    battery = [
        (np.atleast_1d(item['x0']), float(item['t']), scenario.expression(item.get('f', '1')))
        for item in scenario.section('mc')['battery']
    ]
    report = mc_vs_pde(problem.operator, scenario.process, battery)
    assert report.max_abs_z <= 4


@pytest.mark.slow
def test_long_time_occupation_matches_density():
    problem = bundled('conservative_1d')
    op = problem.operator
    occupancy = occupation_histogram(op, ProcessConfig(1e-3, 20000, seed=4), [0.25], 1.0)
    h = invariant_density(op).h
    assert total_variation(occupancy, h * problem.grid.cell_volume) < 0.05
