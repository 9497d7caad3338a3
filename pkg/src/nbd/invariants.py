""" 不变量检查

每个检查是一个注册过的函数，接收 `CheckContext`，返回说明文字；
条件不满足时抛出 InvariantFailure，不适用时抛出 Skip
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List

import numpy as np

from . import config
from .assembly import assemble_nonlocal, closed_classes, conservation_defect
from .coeffs import SPATIAL_VARIABLES, validate_coefficients
from .exceptions import InvariantFailure, NbdError, NeumannStalled
from .expr import parse_expr, to_source
from .grid import BOUNDARY, INTERIOR, build_grid, connected_components
from .mc import ProcessConfig, pde_value, simulate_ensemble, z_score
from .measures import Atoms, MeasureMatrix, Mixture, _splat, discretize_measures
from .scenario import Problem
from .solver import (
    EvolveRequest, ResolventRequest, domination_check, evolve, holomorphic_bound_scan,
    resolvent
)
from .spectral import decay_fit, eigen_spectrum, spectral_projection

logger = logging.getLogger(__name__)

PASS, FAIL, SKIP = 'pass', 'fail', 'skip'
LAMBDAS = (0.5, 1.0, 5.0, 50.0)


class Skip(Exception):
    """ 检查不适用于当前场景
    """
    pass


@dataclass(frozen=True)
class Outcome:
    name: str
    status: str
    detail: str


INVARIANTS: Dict[str, Callable] = {}


def invariant(name):
    def decorator(func):
        INVARIANTS[name] = func
        return func

    return decorator


def require(condition, message):
    if not condition:
        raise InvariantFailure(message)


def fallback_dt(grid) -> float:
    """ 场景没有 mc 段时的步长：h_min^2 / 8，一步的扩散距离远小于格距
    """
    return min(grid.h)**2 / 8


class CheckContext:
    """ 一个场景上所有检查共享的计算结果
    """
    def __init__(self, problem: Problem, seed=0, mc_paths=None):
        self.problem = problem
        self.scenario = problem.scenario
        self.seed = seed
        self.mc_paths = mc_paths or config.CHECK_MC_PATHS

    @property
    def grid(self):
        return self.problem.grid

    @property
    def op(self):
        return self.problem.operator

    def random_f(self, count=5, signed=False):
        rng = np.random.default_rng(self.seed)
        low = -1.0 if signed else 0.0
        return [rng.uniform(low, 1.0, self.op.n) for _ in range(count)]

    @property
    def monotone(self):
        return self.op.dirichlet.is_monotone()

    def require_monotone(self):
        if not self.monotone:
            raise Skip('scheme is not monotone for these coefficients')

    @cached_property
    def spectrum(self):
        if self.op.n > config.MAX_DENSE_DIM:
            raise Skip(f'{self.op.n} interior nodes exceed the dense eigensolve limit')
        return spectral_projection(self.op, eigen_spectrum(self.op, self.scenario.tol_zero))

    @cached_property
    def classes(self):
        return closed_classes(self.op)

    @property
    def center(self):
        """ 离区域中心最近的内部节点坐标
        """
        coords = self.grid.interior_coords
        middle = coords.mean(axis=0)
        return coords[np.argmin(np.abs(coords - middle).sum(axis=1))]

    @cached_property
    def process(self) -> ProcessConfig:
        base = self.scenario.process or ProcessConfig(
            dt=fallback_dt(self.grid), n_paths=1, seed=self.seed
        )
        return ProcessConfig(base.dt, self.mc_paths, base.seed, base.chunk_size)

    @cached_property
    def mc_item(self):
        """ (x0, t, f)：场景 mc.check 段给出，默认从中心出发、f ≡ 1
        """
        item = self.scenario.section('mc').get('check', {})
        x0 = np.asarray(item.get('x0', self.center), dtype=float)
        t = float(item.get('t', 0.1))
        f = self.scenario.expression(item.get('f', '1'))
        return x0, t, f


def run_checks(ctx: CheckContext, names=None) -> List[Outcome]:
    outcomes = []
    for name in names or INVARIANTS:
        if name not in INVARIANTS:
            raise KeyError(name)
        try:
            detail = INVARIANTS[name](ctx) or ''
            outcome = Outcome(name, PASS, detail)
        except Skip as e:
            outcome = Outcome(name, SKIP, str(e))
        except InvariantFailure as e:
            outcome = Outcome(name, FAIL, str(e))
        except NbdError as e:
            outcome = Outcome(name, FAIL, f'{type(e).__name__}: {e}')
        logger.info(f'{outcome.status:4} {name} {outcome.detail}')
        outcomes.append(outcome)
    return outcomes


# 网格


@invariant('grid.partition')
def grid_partition(ctx):
    grid = ctx.grid
    require(grid.n_interior > 0, 'no interior nodes')
    classes = grid.node_class
    require(
        np.count_nonzero(classes == INTERIOR) == grid.n_interior
        and np.count_nonzero(classes == BOUNDARY) == grid.n_boundary,
        'node classes do not match the interior and boundary lists'
    )
    require(
        np.all(np.diff(grid.interior) > 0) and np.all(np.diff(grid.boundary) > 0),
        'node lists are not in lexicographic order'
    )
    return f'{grid.n_interior} interior, {grid.n_boundary} boundary'


@invariant('grid.components')
def grid_components(ctx):
    domain = ctx.scenario.domain
    if domain.indicator is not None:
        raise Skip('indicator domain')
    h = max(ctx.grid.h)
    for a, b in itertools.combinations(domain.pieces, 2):
        separation = max(
            max(b_lo - a_hi, a_lo - b_hi)
            for a_lo, a_hi, b_lo, b_hi in zip(a.lo, a.hi, b.lo, b.hi)
        )
        if separation < 2 * h:
            raise Skip('pieces are closer than 2h')
    count, _ = connected_components(ctx.grid)
    require(count == len(domain.pieces), f'{count} components for {len(domain.pieces)} pieces')
    return f'{count} component(s)'


@invariant('grid.deterministic')
def grid_deterministic(ctx):
    again = build_grid(ctx.scenario.domain, ctx.scenario.n)
    require(
        np.array_equal(again.interior, ctx.grid.interior)
        and np.array_equal(again.boundary, ctx.grid.boundary),
        'rebuilding the grid changed the node ordering'
    )


# 系数


@invariant('coeffs.valid')
def coeffs_valid(ctx):
    report = validate_coefficients(ctx.scenario.coefficients, ctx.grid, strict=False)
    require(report.passed, report.message)
    return f'min eigenvalue {report.min_eigenvalue:.6g}'


@invariant('coeffs.round_trip')
def coeffs_round_trip(ctx):
    variables = SPATIAL_VARIABLES[:ctx.grid.dimension]
    for e in ctx.scenario.coefficients.expressions():
        once = parse_expr(to_source(e), variables)
        require(once == e, f'{to_source(e)!r} does not survive a print/parse round trip')
        require(to_source(once) == to_source(e), f'printing {to_source(e)!r} is not stable')


@invariant('coeffs.resolution_independent')
def coeffs_resolution_independent(ctx):
    c = ctx.scenario.coefficients
    if not c.is_constant():
        raise Skip('coefficients are not constant')
    finer = build_grid(ctx.scenario.domain, 2 * ctx.scenario.n)
    a = validate_coefficients(c, ctx.grid, strict=False)
    b = validate_coefficients(c, finer, strict=False)
    require(
        (a.passed, a.min_eigenvalue, a.max_c0) == (b.passed, b.min_eigenvalue, b.max_c0),
        'validation changed under refinement'
    )


# 测度


@invariant('measures.row_mass')
def measures_row_mass(ctx):
    m = ctx.problem.measure
    sums = m.matrix @ np.ones(ctx.op.n)
    require(np.all(sums >= 0) and np.all(sums <= 1 + 1e-12), 'row mass outside [0, 1]')
    require(np.allclose(sums, m.masses, rtol=0, atol=1e-12), 'row mass differs from m(z)')
    return f'masses in [{sums.min(initial=0):.6g}, {sums.max(initial=0):.6g}]'


def _atoms(component):
    if isinstance(component, Atoms):
        yield component
    elif isinstance(component, Mixture):
        for _, part in component.parts:
            yield from _atoms(part)


@invariant('measures.splat_mass')
def measures_splat_mass(ctx):
    points = {
        p for region in ctx.scenario.measure.regions
        for atoms in _atoms(region.component) for p in atoms.points
    }
    if not points:
        raise Skip('no atoms')
    for point in sorted(points):
        _, weights = _splat(ctx.grid, point)
        require(
            np.all(weights >= 0) and abs(weights.sum() - 1.0) <= 4 * np.finfo(float).eps,
            f'splat weights of {point} sum to {weights.sum()!r}'
        )
    return f'{len(points)} atom(s)'


@invariant('measures.refinement')
def measures_refinement(ctx):
    if ctx.grid.dimension != 1:
        raise Skip('refinement check runs in one dimension')
    values = []
    for level in (1, 2, 4):
        grid = build_grid(ctx.scenario.domain, level * ctx.scenario.n)
        m = discretize_measures(ctx.scenario.measure, grid)
        mv = m.matrix @ grid.interior_coords[:, 0]
        values.append(dict(zip(np.round(grid.boundary_coords[:, 0], 12), mv)))
    common = sorted(set(values[0]) & set(values[1]) & set(values[2]))
    if not common:
        raise Skip('no boundary node is shared across resolutions')
    d1 = max(abs(values[0][z] - values[1][z]) for z in common)
    d2 = max(abs(values[1][z] - values[2][z]) for z in common)
    if d2 < 1e-12:
        return 'exact at every resolution'
    order = np.log2(d1 / d2)
    require(order >= 0.9, f'observed order {order:.3g}')
    return f'observed order {order:.3g}'


# 组装


@invariant('assembly.monotone')
def assembly_monotone(ctx):
    c = ctx.scenario.coefficients
    if ctx.scenario.scheme != 'upwinded' or not c.is_diagonal():
        raise Skip('monotonicity is only guaranteed for upwinded, diagonal a')
    require(ctx.op.dirichlet.is_monotone(), 'A0 does not have the M-matrix sign pattern')


@invariant('assembly.row_sums')
def assembly_row_sums(ctx):
    ctx.require_monotone()
    sums = ctx.op.matrix @ np.ones(ctx.op.n)
    scale = np.abs(ctx.op.matrix.diagonal()).max()
    require(np.all(sums <= 1e-12 * scale), f'row sum {sums.max():.3g} > 0')
    return f'max row sum {sums.max():.3g}'


@invariant('assembly.conservation')
def assembly_conservation(ctx):
    if not ctx.op.is_conservative:
        raise Skip('not conservative')
    defect = conservation_defect(ctx.op)
    require(defect <= 1e-12, f'|A_nl 1| = {defect:.3g}')
    return f'|A_nl 1| = {defect:.3g}'


@invariant('assembly.locality')
def assembly_locality(ctx):
    d = ctx.op.dirichlet
    local = assemble_nonlocal(d, MeasureMatrix.zero(ctx.grid))
    difference = (ctx.op.matrix - local.matrix).tocoo()
    touched = set(np.flatnonzero(np.diff(d.A_ib.tocsr().indptr)))
    rows = set(difference.row[difference.data != 0].tolist())
    require(rows <= touched, 'the measure changed rows without boundary neighbours')


# 求解器


@invariant('solver.resolvent_identity')
def solver_resolvent_identity(ctx):
    lam, nu = 1.0, 2.0
    worst = 0.0
    for f in ctx.random_f():
        r_lam = resolvent(ctx.op, ResolventRequest(lam, f))[:ctx.op.n]
        r_nu = resolvent(ctx.op, ResolventRequest(nu, f))[:ctx.op.n]
        both = resolvent(ctx.op, ResolventRequest(lam, r_nu))[:ctx.op.n]
        worst = max(worst, np.abs(r_lam - r_nu - (nu - lam) * both).max())
    require(worst < 1e-8, f'residual {worst:.3g}')
    return f'residual {worst:.3g}'


@invariant('solver.method_agreement')
def solver_method_agreement(ctx):
    tol = ctx.scenario.tol
    worst = 0.0
    for lam in (0.5, 2.0, 1 + 10j):
        for f in ctx.random_f(2):
            direct = resolvent(ctx.op, ResolventRequest(lam, f, 'direct', tol))
            scale = max(1.0, np.abs(direct).max())
            for method in ('neumann', 'boundary_reduced'):
                other = resolvent(
                    ctx.op, ResolventRequest(lam, f, method, tol, ctx.scenario.max_iter)
                )
                gap = np.abs(other - direct).max()
                require(gap <= 10 * tol * scale, f'{method} differs by {gap:.3g} at λ={lam}')
                worst = max(worst, gap)
    return f'max difference {worst:.3g}'


@invariant('solver.positivity')
def solver_positivity(ctx):
    ctx.require_monotone()
    for lam in LAMBDAS:
        for f in ctx.random_f():
            u = resolvent(ctx.op, ResolventRequest(lam, f))
            require(u.min() >= -1e-12, f'resolvent has entry {u.min():.3g} at λ={lam}')


@invariant('solver.interior_maximum')
def solver_interior_maximum(ctx):
    if not ctx.op.is_conservative:
        raise Skip('not conservative')
    ctx.require_monotone()
    n = ctx.op.n
    for f in ctx.random_f():
        u = resolvent(ctx.op, ResolventRequest(1.0, f))
        require(u.max() <= u[:n].max() + 1e-12, 'maximum attained on the boundary only')


@invariant('solver.contraction')
def solver_contraction(ctx):
    ctx.require_monotone()
    worst = 0.0
    for lam in LAMBDAS:
        for f in ctx.random_f(signed=True):
            u = lam * resolvent(ctx.op, ResolventRequest(lam, f))
            excess = np.abs(u).max() - np.abs(f).max()
            require(excess <= 1e-10, f'||λR(λ)f|| exceeds ||f|| by {excess:.3g} at λ={lam}')
            worst = max(worst, excess)
    return f'max excess {worst:.3g}'


@invariant('solver.conservation')
def solver_conservation(ctx):
    if not ctx.op.is_conservative:
        raise Skip('not conservative')
    ones = np.ones(ctx.op.n)
    for lam in (1.0, 10.0):
        u = lam * resolvent(ctx.op, ResolventRequest(lam, ones))
        require(np.abs(u - 1).max() <= 1e-10, f'λR(λ)1 ≠ 1 at λ={lam}')
    for t in (0.1, 1.0, 10.0):
        u = evolve(ctx.op, EvolveRequest(ones, t, dt=t / 10))
        require(np.abs(u - 1).max() <= 1e-10, f'T(t)1 ≠ 1 at t={t}')


@invariant('solver.evolve_contraction')
def solver_evolve_contraction(ctx):
    ctx.require_monotone()
    for u0 in ctx.random_f(2):
        u = evolve(ctx.op, EvolveRequest(u0, 1.0, dt=0.05))
        require(u.min() >= -1e-12, 'evolution lost positivity')
        require(u.max() <= u0.max() + 1e-12, 'evolution increased the sup norm')


@invariant('solver.neumann_geometric')
def solver_neumann_geometric(ctx):
    masses = ctx.problem.measure.masses
    c0 = ctx.op.dirichlet.c0
    if not (np.any(masses <= 0.9) or np.any(c0 <= -0.1)):
        raise Skip('no row mass <= 0.9 and no c0 <= -0.1')
    try:
        resolvent(ctx.op, ResolventRequest(1.0, ctx.random_f(1)[0], 'neumann'))
    except NeumannStalled as e:
        raise InvariantFailure(str(e)) from e


@invariant('solver.holomorphic_bound')
def solver_holomorphic_bound(ctx):
    real = holomorphic_bound_scan(ctx.op, 0.5, [1, 10, 100])
    require(real.max_value <= 1 + 1e-10, f'||λR(λ)|| = {real.max_value:.12g} on the real axis')
    samples = [0.5 + 1j * y for y in np.linspace(-100, 100, 17)]
    scan = holomorphic_bound_scan(ctx.op, 0.5, samples)
    require(np.isfinite(scan.max_value), 'resolvent bound is not finite')
    return f'max {scan.max_value:.6g} at λ={scan.argmax}'


@invariant('solver.domination')
def solver_domination(ctx):
    m = ctx.problem.measure
    if m.matrix.nnz == 0:
        raise Skip('zero measure')
    d = ctx.op.dirichlet
    pairs = [
        (MeasureMatrix.zero(ctx.grid), m),
        (MeasureMatrix(0.5 * m.matrix, 0.5 * m.masses), m),
        (m, m),
    ]
    f = np.ones(ctx.op.n)
    worst = 0.0
    for m1, m2 in pairs:
        result = domination_check(d, m1, m2, 1.0, f, tol=1e-10)
        require(result.holds, f'domination violated by {result.max_violation:.3g}')
        worst = max(worst, result.max_violation)
    return f'max violation {worst:.3g}'


# 谱


@invariant('spectral.dissipative')
def spectral_dissipative(ctx):
    spec = ctx.spectrum
    limit = max(1e-10, 1e-14 * ctx.op.norm_inf)
    require(spec.spectral_bound <= limit, f'spectral bound {spec.spectral_bound:.3g} > 0')
    return f'spectral bound {spec.spectral_bound:.6g}'


@invariant('spectral.simple_zero')
def spectral_simple_zero(ctx):
    if len(ctx.classes) != 1:
        raise Skip('not a single closed class')
    spec = ctx.spectrum
    require(spec.zero_modes == 1, f'{spec.zero_modes} zero modes')
    require(spec.gap > 0, 'no spectral gap')
    if len(spec.eigenvalues) > 1:
        second = spec.eigenvalues.real[1]
        require(
            second < -spec.gap / 2,
            f'second eigenvalue real part {second:.6g} is not below -gap/2 = {-spec.gap / 2:.6g}'
        )
    return f'gap {spec.gap:.6g}'


@invariant('spectral.projection')
def spectral_projection_check(ctx):
    P = ctx.spectrum.P
    require(np.abs(P @ P - P).max() < 1e-8, 'P is not idempotent')
    require(P.min() >= -1e-10, f'P has entry {P.min():.3g}')
    if ctx.spectrum.zero_modes > 0 and ctx.op.is_conservative:
        require(np.abs(P @ np.ones(ctx.op.n) - 1).max() < 1e-8, 'P1 ≠ 1')
    return f'rank {ctx.spectrum.rank_P}'


@invariant('spectral.rank')
def spectral_rank(ctx):
    require(
        ctx.spectrum.rank_P == len(ctx.classes),
        f'rank P = {ctx.spectrum.rank_P}, closed classes = {len(ctx.classes)}'
    )


@invariant('spectral.commutes')
def spectral_commutes(ctx):
    P = ctx.spectrum.P
    E = evolve(ctx.op, EvolveRequest(np.eye(ctx.op.n), 0.01, dt=0.01))
    defect = np.abs(E @ P - P @ E).max()
    require(defect < 1e-8, f'||EP - PE|| = {defect:.3g}')


@invariant('spectral.density')
def spectral_density(ctx):
    spec = ctx.spectrum
    if spec.h is None:
        raise Skip('no invariant density')
    h = spec.h
    total = h.sum() * ctx.grid.cell_volume
    require(abs(total - 1) < 1e-10, f'Σ h·cellvol = {total!r}')
    require(spec.clipped < 1e-8, f'clipped {spec.clipped:.3g}')
    E = evolve(ctx.op, EvolveRequest(np.eye(ctx.op.n), 0.01, dt=0.01))
    drift = np.abs(h @ E - h).sum()
    require(drift < 1e-8 * max(1.0, np.abs(h).sum()), f'||hE - h||_1 = {drift:.3g}')


@invariant('spectral.decay')
def spectral_decay(ctx):
    spec = ctx.spectrum
    if spec.rank_P == 0 and spec.spectral_bound < 0:
        rate = -spec.spectral_bound
    elif spec.rank_P == 1 and np.isfinite(spec.gap):
        rate = spec.gap
    else:
        raise Skip('decay rate is not determined by a single mode')
    u0 = ctx.grid.interior_coords[:, 0] + 0.5
    fit = decay_fit(ctx.op, spec.P, u0, np.linspace(0.5, 6.0, 8) / rate)
    error = abs(fit.epsilon - rate) / rate
    require(error <= 0.1, f'ε = {fit.epsilon:.6g}, expected {rate:.6g}')
    return f'ε = {fit.epsilon:.6g} ({error:.2%} off)'


# 蒙特卡罗


def _estimate(ctx, n_paths=None, dt=None, t=None):
    x0, t0, f = ctx.mc_item
    cfg = ctx.process
    cfg = ProcessConfig(dt or cfg.dt, n_paths or cfg.n_paths, cfg.seed, cfg.chunk_size)
    return simulate_ensemble(ctx.op, cfg, x0, t or t0, f)


@invariant('mc.conservative_alive')
def mc_conservative_alive(ctx):
    if not ctx.op.is_conservative:
        raise Skip('not conservative')
    estimate = _estimate(ctx)
    require(
        estimate.alive_fraction == 1.0 and estimate.kill_count == 0,
        f'{estimate.kill_count} path(s) died'
    )
    return f'{estimate.return_count} return(s)'


@invariant('mc.determinism')
def mc_determinism(ctx):
    require(_estimate(ctx) == _estimate(ctx), 'two runs with the same seed differ')


@invariant('mc.consistency')
def mc_consistency(ctx):
    small = _estimate(ctx)
    large = _estimate(ctx, n_paths=4 * ctx.process.n_paths)
    if small.stderr == 0 or large.stderr == 0:
        raise Skip('the estimate is deterministic')
    ratio = small.stderr / large.stderr
    require(abs(ratio - 2) <= 0.4, f'stderr ratio {ratio:.3g}')
    return f'stderr ratio {ratio:.3g}'


@invariant('mc.alive_monotone')
def mc_alive_monotone(ctx):
    if ctx.op.is_conservative:
        raise Skip('conservative')
    _, t, _ = ctx.mc_item
    fractions = [_estimate(ctx, t=s * t).alive_fraction for s in (1, 2, 4)]
    n = ctx.process.n_paths
    slack = 3 * np.sqrt(0.25 / n)
    require(
        all(b <= a + slack for a, b in zip(fractions, fractions[1:])),
        f'alive fractions {fractions}'
    )
    return f'alive fractions {fractions}'


@invariant('mc.dt_refinement')
def mc_dt_refinement(ctx):
    coarse = _estimate(ctx)
    fine = _estimate(ctx, dt=ctx.process.dt / 2)
    limit = 4 * np.hypot(coarse.stderr, fine.stderr)
    require(
        abs(coarse.mean - fine.mean) <= limit,
        f'means {coarse.mean:.6g} and {fine.mean:.6g} differ by more than {limit:.3g}'
    )


@invariant('mc.pde_bridge')
def mc_pde_bridge(ctx):
    x0, t, f = ctx.mc_item
    estimate = _estimate(ctx)
    pde = pde_value(ctx.op, x0, t, f)
    z = z_score(estimate.mean, estimate.stderr, pde)
    require(abs(z) <= 4, f'z = {z:.3g} (MC {estimate.mean:.6g}, PDE {pde:.6g})')
    return f'z = {z:.3g}'
