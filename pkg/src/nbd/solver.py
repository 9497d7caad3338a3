""" 求解器

Dirichlet 问题、S_λ、非局部预解式（三种方法）、半群演化、预解式界扫描和控制检查
"""
from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from . import config
from .assembly import DirichletOperator, NonlocalOperator, assemble_nonlocal, closed_classes
from .exceptions import (
    ConfigError, NeumannStalled, NonConvergedLinearSolve, PreconditionViolated,
    SingularAtZero, SingularSystem
)
from .measures import MeasureMatrix

logger = logging.getLogger(__name__)

METHODS = ('direct', 'neumann', 'boundary_reduced')
EVOLVE_SCHEMES = ('backward_euler', 'post_widder')
# 连续 10 次迭代增量之比超过该值视为停滞
STALL_RATIO = 0.999
STALL_WINDOW = 10


class FactorCache:
    """ LU 分解缓存

    读多写少：查询和插入在锁内完成，分解本身在锁外进行。
    被淘汰的分解对象仍由正在求解的调用方持有，不会失效。
    """
    def __init__(self, maxsize: int):
        self.maxsize = maxsize
        self._lock = threading.Lock()
        self._data = OrderedDict()

    def get(self, key, factory):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = factory()
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()

    def __len__(self):
        return len(self._data)


CACHE = FactorCache(config.CACHE_SIZE)


def as_lambda(lam):
    """ 虚部为零的复数转成实数，方便做缓存键和选择实数分解
    """
    lam = complex(lam)
    if lam.imag == 0:
        return lam.real
    return lam


def _shifted(matrix: sparse.spmatrix, lam) -> sparse.csc_matrix:
    n = matrix.shape[0]
    dtype = complex if isinstance(lam, complex) else float
    return (lam * sparse.identity(n, dtype=dtype, format='csc') - matrix).tocsc()


@dataclass(frozen=True)
class Factorization:
    lu: object
    is_complex: bool


def _factor(key, kind, matrix, lam) -> Factorization:
    lam = as_lambda(lam)

    def factory():
        try:
            return Factorization(splu(_shifted(matrix, lam)), isinstance(lam, complex))
        except RuntimeError as e:
            raise SingularSystem(f'λ={lam}: {e}', sample=lam) from e

    return CACHE.get((key, kind, lam), factory)


def lu_solve(factor: Factorization, rhs: np.ndarray, trans='N') -> np.ndarray:
    """ 实数分解遇到复数右端时分别求解实部与虚部
    """
    rhs = np.asarray(rhs)
    if np.iscomplexobj(rhs) and not factor.is_complex:
        result = factor.lu.solve(np.ascontiguousarray(rhs.real), trans=trans) \
            + 1j * factor.lu.solve(np.ascontiguousarray(rhs.imag), trans=trans)
    else:
        rhs = rhs.astype(complex if factor.is_complex else float, copy=False)
        result = factor.lu.solve(np.ascontiguousarray(rhs), trans=trans)
    if not np.all(np.isfinite(result)):
        raise SingularSystem('linear solve produced non-finite values')
    return result


def _check_residual(matrix, lam, u, rhs):
    residual = lam * u - matrix @ u - rhs
    scale = np.abs(rhs).max(initial=0.0) + abs(lam) * np.abs(u).max(initial=0.0) \
        + abs(matrix).sum(axis=1).max() * np.abs(u).max(initial=0.0)
    if np.abs(residual).max(initial=0.0) > 1e-8 * max(scale, 1e-300):
        raise NonConvergedLinearSolve(
            f'residual {np.abs(residual).max():.3g} too large at λ={lam}'
        )


def _dirichlet(op) -> DirichletOperator:
    return getattr(op, 'dirichlet', op)


def dirichlet_solve(op, lam, f: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """ 求解 λu - 𝒜u = f，u|∂Ω = φ

    返回全网格向量：内部为 u，边界为 φ
    """
    d = _dirichlet(op)
    lam = as_lambda(lam)
    if lam.real < 0:
        raise ConfigError(f'Re λ must be nonnegative, got {lam}')
    rhs = np.asarray(f) + d.A_ib @ np.asarray(phi)
    factor = _factor(d.key, 'dirichlet', d.A_ii, lam)
    u = lu_solve(factor, rhs)
    _check_residual(d.A_ii, lam, u, rhs)
    return np.concatenate([u, np.asarray(phi, dtype=u.dtype)])


def apply_S(op: NonlocalOperator, lam, v: np.ndarray) -> np.ndarray:
    """ S_λ v：以 φ(z) = <v, μ(z)> 为边界值的 λ-调和延拓
    """
    n = op.n
    phi = op.measure.matrix @ np.asarray(v)[:n]
    return dirichlet_solve(op, lam, np.zeros(n, dtype=phi.dtype), phi)


@dataclass(frozen=True)
class ResolventRequest:
    lam: complex
    f: np.ndarray
    method: str = 'direct'
    tol: float = config.SOLVER_TOL
    max_iter: int = config.SOLVER_MAX_ITER

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f'unknown method {self.method!r}, expected one of {METHODS}')
        if not self.tol > 0:
            raise ConfigError('tol must be positive')
        if self.max_iter < 1:
            raise ConfigError('max_iter must be at least 1')
        if as_lambda(self.lam).real < 0:
            raise ConfigError(f'Re λ must be nonnegative, got {self.lam}')


def resolvent(op: NonlocalOperator, req: ResolventRequest) -> np.ndarray:
    """ 非局部预解式 R(λ, A_μ) f，返回全网格向量

    direct 直接解 (λ - A_nl) u = f；neumann 迭代 (I - S_λ)^{-1} R(λ, A0) f；
    boundary_reduced 在边界上解 (I - G_λ) β = M w
    """
    lam = as_lambda(req.lam)
    f = np.asarray(req.f)
    if lam == 0 and closed_classes(op):
        raise SingularAtZero('λ=0 lies in the spectrum: the operator has a conserved mode')

    try:
        if req.method == 'direct':
            factor = _factor(op.key, 'nonlocal', op.matrix, lam)
            u = lu_solve(factor, f)
            _check_residual(op.matrix, lam, u, f)
            return op.extend(u)
        if req.method == 'neumann':
            return _neumann(op, lam, f, req.tol, req.max_iter)
        return _boundary_reduced(op, lam, f)
    except SingularSystem as e:
        if lam == 0:
            raise SingularAtZero(f'λ=0: {e}') from e
        raise


def _neumann(op, lam, f, tol, max_iter):
    w = dirichlet_solve(op, lam, f, np.zeros(op.measure.shape[0]))
    v = w
    increments = []
    for k in range(max_iter):
        v_next = w + apply_S(op, lam, v)
        increment = float(np.abs(v_next - v).max())
        v = v_next
        increments.append(increment)
        if increment == 0.0:
            break
        if k > 0:
            # 几何收敛时剩余误差约为 increment * ρ / (1 - ρ)
            rho = min(increment / increments[-2], STALL_RATIO)
            if increment <= tol * (1 - rho):
                break
        if k >= STALL_WINDOW and increment > STALL_RATIO * increments[-1 - STALL_WINDOW]:
            raise NeumannStalled(
                f'Neumann series stalled after {k + 1} iterations '
                f'(increment {increment:.3g}) at λ={lam}'
            )
    else:
        raise NeumannStalled(f'Neumann series did not converge in {max_iter} iterations')
    logger.debug(f'Neumann series converged in {len(increments)} iterations at λ={lam}')
    return v


def harmonic_lift(op, lam) -> np.ndarray:
    """ E_λ：边界单位向量的 λ-调和延拓在内部的值，形状 (内部, 边界)
    """
    d = _dirichlet(op)
    factor = _factor(d.key, 'dirichlet', d.A_ii, lam)
    return lu_solve(factor, d.A_ib.toarray())


def _boundary_reduced(op, lam, f):
    n = op.n
    w = dirichlet_solve(op, lam, f, np.zeros(op.measure.shape[0]))[:n]
    E = harmonic_lift(op, lam)
    M = op.measure.matrix
    G = M @ E
    try:
        beta = scipy.linalg.solve(np.eye(G.shape[0]) - G, M @ w)
    except scipy.linalg.LinAlgError as e:
        raise SingularSystem(f'I - G_λ is singular at λ={lam}', sample=lam) from e
    return np.concatenate([w + E @ beta, beta])


def resolvent_with_fallback(op, req: ResolventRequest) -> np.ndarray:
    """ Neumann 级数停滞时改用直接法
    """
    try:
        return resolvent(op, req)
    except NeumannStalled as e:
        logger.warning(f'{e}; falling back to the direct method')
        return resolvent(
            op, ResolventRequest(req.lam, req.f, 'direct', req.tol, req.max_iter)
        )


@dataclass(frozen=True)
class EvolveRequest:
    u0: np.ndarray
    t: float
    scheme: str = 'backward_euler'
    dt: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.scheme not in EVOLVE_SCHEMES:
            raise ConfigError(f'unknown scheme {self.scheme!r}')
        if not self.t > 0:
            raise ConfigError('t must be positive')
        if self.scheme == 'backward_euler' and not (self.dt and self.dt > 0):
            raise ConfigError('backward_euler needs dt > 0')
        if self.scheme == 'post_widder' and not (self.n and self.n >= 1):
            raise ConfigError('post_widder needs n >= 1')


def march(op: NonlocalOperator, u: np.ndarray, lam: float, steps: int, trans='N') -> np.ndarray:
    """ u <- λ R(λ, A_nl) u，重复 steps 次（步长 1/λ 的向后 Euler）

    trans='T' 时作用转置，用于推进分布
    """
    factor = _factor(op.key, 'nonlocal', op.matrix, lam)
    for _ in range(steps):
        u = lam * lu_solve(factor, u, trans=trans)
    return u


def _steps(span, dt):
    return max(1, math.ceil(span / dt - 1e-12))


def evolve(op: NonlocalOperator, req: EvolveRequest) -> np.ndarray:
    """ 近似 T_μ(t) u0，返回内部向量
    """
    u = np.asarray(req.u0, dtype=float)
    if req.scheme == 'backward_euler':
        steps = _steps(req.t, req.dt)
    else:
        steps = req.n
    # Post–Widder：((n/t) R(n/t, A))^n，与 dt = t/n 的向后 Euler 相同
    return march(op, u, steps / req.t, steps)


def evolve_path(op: NonlocalOperator, u0: np.ndarray, times: Sequence[float], dt: float):
    """ 依次推进到每个时刻，返回快照数组 (len(times), n)
    """
    u = np.asarray(u0, dtype=float)
    previous = 0.0
    snapshots = []
    for t in times:
        span = t - previous
        if span < 0:
            raise ConfigError('times must be increasing')
        if span > 0:
            steps = _steps(span, dt)
            u = march(op, u, steps / span, steps)
        snapshots.append(u)
        previous = t
    return np.array(snapshots)


def evolve_refined(
    op: NonlocalOperator, u0, times, rtol=0.01, dt0=None, extrapolate=False,
    observe=None, atol=0.0, max_halvings=14
):
    """ 步长减半直到相邻两次结果的相对差 < rtol

    默认比较每个时刻快照的上确界范数；给出 `observe` 时比较 observe(快照) 的每个分量。
    返回 (快照, 最终步长)，`extrapolate` 时快照为 Richardson 外推 2u_{dt/2} - u_dt
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dt = dt0 or float(times[-1]) / 8
    coarse = evolve_path(op, u0, times, dt)
    for _ in range(max_halvings):
        dt /= 2
        fine = evolve_path(op, u0, times, dt)
        if observe is None:
            diff = np.abs(fine - coarse).max(axis=1)
            scale = np.abs(fine).max(axis=1)
        else:
            diff = np.abs(observe(fine) - observe(coarse))
            scale = np.abs(observe(fine))
        if np.all(diff <= rtol * scale + atol):
            break
        coarse = fine
    else:
        logger.warning(f'step halving stopped at dt={dt:.3g} before reaching rtol={rtol}')
    logger.debug(f'step halving settled at dt={dt:.3g}')
    if extrapolate:
        return 2 * fine - coarse, dt
    return fine, dt


def transition_kernel(op: NonlocalOperator, t: float, dt: float) -> np.ndarray:
    """ T(t) 的稠密矩阵，第 i 行是从内部节点 i 出发的转移概率
    """
    return evolve(op, EvolveRequest(np.eye(op.n), t, dt=dt))


@dataclass(frozen=True)
class ScanResult:
    samples: np.ndarray
    values: np.ndarray
    method: str
    columns: int

    @property
    def max_value(self):
        return float(self.values.max())

    @property
    def argmax(self):
        return complex(self.samples[int(np.argmax(self.values))])


def holomorphic_bound_scan(
    op: NonlocalOperator, omega: float, samples, exact_max_dim=2048, columns=8
) -> ScanResult:
    """ 在右半平面 Re λ >= ω 的样本上计算 ||λ R(λ, A_nl)||_∞

    维数不超过 exact_max_dim 时逐列精确计算，否则用 onenormest 作用在转置上估计
    """
    samples = np.asarray([complex(s) for s in samples])
    if samples.size == 0:
        raise ConfigError('holomorphic_bound_scan needs at least one sample')
    if not omega > 0 or np.any(samples.real < omega):
        raise ConfigError(f'every sample needs Re λ >= ω > 0 (ω={omega})')

    exact = op.n <= exact_max_dim
    values = []
    for lam in samples:
        lam = as_lambda(lam)
        try:
            factor = _factor(op.key, 'nonlocal', op.matrix, lam)
            if exact:
                R = lu_solve(factor, np.eye(op.n))
                values.append(float(np.abs(lam * R).sum(axis=1).max()))
            else:
                values.append(_estimate_norm(factor, lam, op.n, columns))
        except SingularSystem as e:
            raise SingularSystem(f'singular at sample λ={lam}: {e}', sample=lam) from e
    result = ScanResult(samples, np.asarray(values), 'exact' if exact else 'onenormest', columns)
    logger.info(
        f'resolvent bound scan: max ||λR(λ)||_∞ = {result.max_value:.6g} '
        f'at λ={result.argmax} ({result.method})'
    )
    return result


def _estimate_norm(factor, lam, n, columns):
    # ||B||_∞ = ||B^T||_1，B = λR(λ)
    dtype = complex if isinstance(lam, complex) else float
    transposed = LinearOperator(
        (n, n),
        matvec=lambda x: lam * lu_solve(factor, np.asarray(x, dtype=dtype).ravel(), trans='T'),
        rmatvec=lambda x: np.conj(
            lam * lu_solve(factor, np.conj(np.asarray(x, dtype=dtype).ravel()))
        ),
        dtype=dtype,
    )
    return float(onenormest(transposed, t=min(columns, n)))


@dataclass(frozen=True)
class DominationResult:
    holds: bool
    max_violation: float
    precondition_met: bool
    precondition_excess: float


def domination_check(
    d: DirichletOperator, m1: MeasureMatrix, m2: MeasureMatrix, lam: float,
    f: np.ndarray, tol=1e-10
) -> DominationResult:
    """ 检查 μ1 <= μ2 时 R(λ, A_μ1) f <= R(λ, A_μ2) f

    前提不成立时抛出 PreconditionViolated，计算结果放在异常的 `result` 中
    """
    if not lam > 0:
        raise ConfigError('domination_check needs real λ > 0')
    precondition_met, excess = m1.dominated_by(m2)

    u1 = resolvent(assemble_nonlocal(d, m1), ResolventRequest(lam, f))
    u2 = resolvent(assemble_nonlocal(d, m2), ResolventRequest(lam, f))
    violation = float(max((u1 - u2).max(), 0.0))
    result = DominationResult(violation <= tol, violation, precondition_met, excess)

    if not precondition_met:
        logger.warning(
            f'm1 is not dominated by m2 (excess {excess:.3g}); '
            f'observed violation {violation:.3g} is reported only'
        )
        raise PreconditionViolated('m1 is not dominated by m2 entrywise', result)
    return result
