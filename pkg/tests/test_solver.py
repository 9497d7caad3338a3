from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from conftest import bundled, delta_rod, rod
from hypothesis import given
from hypothesis import strategies as st

from nbd.exceptions import (
    ConfigError, NeumannStalled, PreconditionViolated, SingularAtZero
)
from nbd.measures import MeasureMatrix
from nbd.solver import (
    CACHE, EvolveRequest, FactorCache, ResolventRequest, apply_S, dirichlet_solve,
    domination_check, evolve, evolve_path, evolve_refined, holomorphic_bound_scan,
    resolvent, resolvent_with_fallback, transition_kernel
)


def solve(op, lam, f, method='direct', **kwargs):
    return resolvent(op, ResolventRequest(lam, f, method, **kwargs))


def test_dirichlet_poisson_is_exact_for_quadratics():
    d = rod(n=4).dirichlet
    u = dirichlet_solve(d, 0, np.ones(3), np.zeros(2))
    np.testing.assert_allclose(u, [0.09375, 0.125, 0.09375, 0, 0])


def test_dirichlet_maximum_principle(dirichlet_rod):
    op = dirichlet_rod.operator
    u = dirichlet_solve(op, 1, np.zeros(op.n), np.ones(2))
    interior = u[:op.n]
    assert np.all(interior < 1) and np.all(interior > 0)
    np.testing.assert_array_equal(u[op.n:], [1, 1])
    with pytest.raises(ConfigError):
        dirichlet_solve(op, -1, np.zeros(op.n), np.ones(2))


def test_S_is_harmonic_extension(conservative_rod, dirichlet_rod):
    op = conservative_rod.operator
    np.testing.assert_allclose(apply_S(op, 0, np.ones(op.n)), 1, atol=1e-12)
    empty = dirichlet_rod.operator
    assert not apply_S(empty, 1, np.ones(empty.n)).any()


def test_constant_solution_when_conservative(conservative_rod):
    op = conservative_rod.operator
    np.testing.assert_allclose(solve(op, 2, np.full(op.n, 2.0)), 1, atol=1e-12)


def test_zero_measure_resolvent_is_dirichlet(dirichlet_rod):
    op = dirichlet_rod.operator
    f = dirichlet_rod.interior_vector('sin(pi * x)')
    np.testing.assert_allclose(
        solve(op, 1.5, f), dirichlet_solve(op, 1.5, f, np.zeros(2)), atol=1e-14
    )


def test_singular_at_zero(conservative_rod, dirichlet_rod):
    op = conservative_rod.operator
    with pytest.raises(SingularAtZero):
        solve(op, 0, np.ones(op.n))
    op = dirichlet_rod.operator
    u = solve(op, 0, np.ones(op.n))
    assert u.max() == pytest.approx(0.125)


def _continuum_delta_solution():
    # u - u'' = x，u(0) = u(1) = u(1/2)：u = x + c1 e^x + c2 e^-x
    e, r = np.e, np.sqrt(np.e)
    system = np.array([[1, 1, -1], [e, 1 / e, -1], [r, 1 / r, -1]])
    c1, c2, _ = np.linalg.solve(system, [0, -1, -0.5])
    return lambda x: x + c1 * np.exp(x) + c2 * np.exp(-x)


def test_second_order_convergence():
    exact = _continuum_delta_solution()
    sizes = [16, 32, 64, 128]
    errors = []
    for n in sizes:
        problem = delta_rod(n=n)
        op = problem.operator
        u = solve(op, 1, problem.interior_vector('x'))
        x = problem.grid.active_coords[:, 0]
        errors.append(np.abs(u - exact(x)).max())
    slope = np.polyfit(np.log(1 / np.asarray(sizes)), np.log(errors), 1)[0]
    assert slope >= 1.9


@pytest.mark.parametrize('lam', [0.5, 2.0, 1 + 10j, 3 - 4j])
@pytest.mark.parametrize('name', ['conservative_1d', 'subprob_2d', 'drift_1d'])
def test_methods_agree(name, lam):
    problem = bundled(name)
    op = problem.operator
    f = problem.interior_vector('1 + x')
    direct = solve(op, lam, f)
    for method in ('neumann', 'boundary_reduced'):
        other = solve(op, lam, f, method, tol=1e-10)
        np.testing.assert_allclose(other, direct, atol=1e-8 * np.abs(direct).max())


def test_complex_right_hand_side_on_real_factor(subprob_rod):
    op = subprob_rod.operator
    re, im = subprob_rod.interior_vector('x'), subprob_rod.interior_vector('1 - x')
    u = solve(op, 2, re + 1j * im)
    np.testing.assert_allclose(u, solve(op, 2, re) + 1j * solve(op, 2, im), atol=1e-14)


def test_neumann_fallback(conservative_rod, caplog):
    op = conservative_rod.operator
    f = np.ones(op.n)
    request = ResolventRequest(1.0, f, 'neumann', tol=1e-15, max_iter=3)
    with pytest.raises(NeumannStalled):
        resolvent(op, request)
    np.testing.assert_allclose(resolvent_with_fallback(op, request), 1, atol=1e-12)
    assert 'falling back to the direct method' in caplog.text


@pytest.mark.parametrize(
    'kwargs', [
        {'method': 'multigrid'},
        {'tol': 0},
        {'max_iter': 0},
        {'lam': -1},
    ]
)
def test_bad_requests(kwargs):
    args = dict(lam=1, f=np.ones(3))
    args.update(kwargs)
    with pytest.raises(ConfigError):
        ResolventRequest(**args)


def test_resolvent_identity(subprob_rod):
    op = subprob_rod.operator
    f = np.random.default_rng(1).uniform(size=op.n)
    lam, mu = 1.0, 3.0
    u, v = solve(op, lam, f), solve(op, mu, f)
    w = solve(op, lam, v[:op.n])
    np.testing.assert_allclose(u - v, (mu - lam) * w, atol=1e-12)


@given(
    st.floats(min_value=0.1, max_value=100),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_positive_contraction(lam, seed):
    op = delta_rod(n=16, weight=0.9).operator
    f = np.random.default_rng(seed).uniform(0, 1, op.n)
    u = lam * solve(op, lam, f)
    assert u.min() >= -1e-12
    assert u.max() <= f.max() + 1e-12


def test_boundary_values_do_not_exceed_interior(subprob_rod):
    op = subprob_rod.operator
    u = solve(op, 1, np.random.default_rng(3).uniform(size=op.n))
    assert u[op.n:].max() <= u[:op.n].max() + 1e-12


def test_evolution_conserves_constants(conservative_rod):
    op = conservative_rod.operator
    u = evolve(op, EvolveRequest(np.ones(op.n), 0.5, dt=0.01))
    np.testing.assert_allclose(u, 1, atol=1e-12)


def test_post_widder_matches_backward_euler(subprob_rod):
    op = subprob_rod.operator
    u0 = subprob_rod.interior_vector('x')
    widder = evolve(op, EvolveRequest(u0, 0.3, 'post_widder', n=10))
    euler = evolve(op, EvolveRequest(u0, 0.3, dt=0.03))
    np.testing.assert_allclose(widder, euler, rtol=1e-12)


def test_evolve_path_decays(dirichlet_rod):
    op = dirichlet_rod.operator
    snapshots = evolve_path(op, np.ones(op.n), [0.01, 0.1, 1.0], 1e-3)
    norms = np.abs(snapshots).max(axis=1)
    assert np.all(np.diff(norms) < 0)
    assert snapshots.min() > 0
    with pytest.raises(ConfigError):
        evolve_path(op, np.ones(op.n), [0.5, 0.1], 1e-3)


def test_step_halving_with_extrapolation(subprob_rod):
    op = subprob_rod.operator
    u0 = np.ones(op.n)
    refined, dt = evolve_refined(op, u0, [0.1, 0.2], rtol=1e-3, extrapolate=True)
    assert dt < 0.2 / 8
    reference = evolve_path(op, u0, [0.1, 0.2], 1e-5)
    np.testing.assert_allclose(refined, reference, rtol=2e-3)


def test_transition_kernel(conservative_rod, subprob_rod):
    P = transition_kernel(conservative_rod.operator, 0.1, 0.01)
    assert P.min() >= -1e-14
    np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-12)
    Q = transition_kernel(subprob_rod.operator, 0.1, 0.01)
    assert np.all(Q.sum(axis=1) < 1)


@pytest.mark.parametrize(
    'kwargs', [
        {'t': 0, 'dt': 0.1},
        {'t': 1},
        {'t': 1, 'scheme': 'post_widder'},
        {'t': 1, 'scheme': 'crank_nicolson', 'dt': 0.1},
    ]
)
def test_bad_evolve_requests(kwargs):
    with pytest.raises(ConfigError):
        EvolveRequest(np.ones(3), **kwargs)


def test_holomorphic_bound_scan(dirichlet_rod, conservative_rod):
    samples = [0.5, 1, 10] + [1 + 1j * s for s in (-20, -5, 5, 20)]
    scan = holomorphic_bound_scan(dirichlet_rod.operator, 0.5, samples)
    assert scan.method == 'exact'
    real = scan.values[:3]
    assert np.all(real <= 1 + 1e-10)
    assert np.all(np.isfinite(scan.values))

    scan = holomorphic_bound_scan(conservative_rod.operator, 0.5, samples[:3])
    np.testing.assert_allclose(scan.values, 1, atol=1e-10)

    estimate = holomorphic_bound_scan(conservative_rod.operator, 0.5, samples[:3], exact_max_dim=4)
    assert estimate.method == 'onenormest'
    assert np.all(estimate.values <= scan.values * (1 + 1e-8))
    assert np.all(estimate.values >= 0.5 * scan.values)

    with pytest.raises(ConfigError):
        holomorphic_bound_scan(dirichlet_rod.operator, 0.5, [0.25])


def test_domination(conservative_rod):
    d = conservative_rod.dirichlet
    full = conservative_rod.measure
    half = MeasureMatrix(0.5 * full.matrix, 0.5 * full.masses)
    empty = MeasureMatrix.zero(conservative_rod.grid)
    f = np.random.default_rng(0).uniform(size=conservative_rod.operator.n)

    for small, large in [(empty, half), (half, full), (full, full)]:
        result = domination_check(d, small, large, 1.0, f)
        assert result.holds and result.precondition_met

    with pytest.raises(PreconditionViolated) as info:
        domination_check(d, full, empty, 1.0, f)
    assert not info.value.result.precondition_met
    assert info.value.result.max_violation > 0


def test_factor_cache_evicts_least_recent():
    cache = FactorCache(2)
    built = []

    def factory(key):
        return lambda: built.append(key) or key

    for key in ('a', 'b', 'a', 'c', 'b'):
        cache.get(key, factory(key))
    assert built == ['a', 'b', 'c', 'b']
    assert len(cache) == 2


def test_concurrent_solves_share_the_cache(subprob_rod):
    op = subprob_rod.operator
    f = subprob_rod.interior_vector('x')
    lams = [0.5, 1.0, 2.0, 4.0] * 4
    CACHE.clear()
    expected = [solve(op, lam, f) for lam in lams]
    CACHE.clear()
    with ThreadPoolExecutor(max_workers=8) as executor:
        results = list(executor.map(lambda lam: solve(op, lam, f), lams))
    for a, b in zip(results, expected):
        np.testing.assert_array_equal(a, b)
