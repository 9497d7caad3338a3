""" 谱分析

A_nl 的特征值、谱界与谱隙、零特征值对应的谱投影 P、不变密度 h，以及指数收敛常数的拟合
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from . import config
from .assembly import NonlocalOperator, closed_classes
from .exceptions import (
    ConfigError, DefectiveZeroEigenvalue, DimensionTooLarge, DistanceUnderflow,
    EigensolveNoConvergence, NotConservative
)
from .solver import _factor, evolve_refined, lu_solve, march

logger = logging.getLogger(__name__)

__all__ = [
    'SpectralResult', 'InvariantDensity', 'DecayFit', 'eigen_spectrum',
    'spectral_projection', 'invariant_density', 'decay_fit', 'closed_classes',
    'evolve_distribution', 'total_variation', 'singular_value_decay'
]

# 距离低于该值视为已收敛到 P u0
UNDERFLOW = 1e-13
# 左右零向量 Gram 矩阵条件数上限
MAX_PAIRING_CONDITION = 1e10


@dataclass(frozen=True)
class SpectralResult:
    eigenvalues: np.ndarray
    spectral_bound: float
    gap: float
    zero_modes: int
    tol_zero: float
    P: Optional[np.ndarray] = None
    rank_P: int = 0
    h: Optional[np.ndarray] = None
    clipped: float = 0.0

    @property
    def is_dissipative(self):
        return bool(np.all(self.eigenvalues.real <= self.tol_zero))


@dataclass(frozen=True)
class InvariantDensity:
    """ 不变密度，`clipped` 是截断掉的负值相对于 max h 的大小
    """
    h: np.ndarray
    clipped: float


@dataclass(frozen=True)
class DecayFit:
    times: np.ndarray
    distances: np.ndarray
    M: float
    epsilon: float
    residual: float
    window: int
    dt: float
    truncated: bool = False


def _check_dimension(op: NonlocalOperator, max_dim):
    if op.n > max_dim:
        raise DimensionTooLarge(
            f'interior dimension {op.n} exceeds the dense eigensolve limit {max_dim}'
        )


def eigen_spectrum(op: NonlocalOperator, tol_zero=None, max_dim=None) -> SpectralResult:
    """ 稠密非对称特征值分解

    特征值按实部降序排列。tol_zero 缺省为 1e-8·||A_nl||_∞
    """
    _check_dimension(op, max_dim or config.MAX_DENSE_DIM)
    if tol_zero is None:
        tol_zero = 1e-8 * op.norm_inf
    try:
        w = scipy.linalg.eigvals(op.dense)
    except scipy.linalg.LinAlgError as e:
        raise EigensolveNoConvergence(str(e)) from e

    w = w[np.lexsort((-w.imag, -w.real))]
    bound = float(w.real[0])
    below = w.real[w.real < bound - tol_zero]
    gap = float(bound - below[0]) if below.size else float('inf')
    zero_modes = int(np.count_nonzero(np.abs(w.real) < tol_zero))

    logger.info(
        f'spectrum: bound {bound:.10g}, gap {gap:.10g}, {zero_modes} zero mode(s) '
        f'(tol_zero={tol_zero:.3g})'
    )
    return SpectralResult(w, bound, gap, zero_modes, float(tol_zero))


def _null_spaces(A: np.ndarray, k: int, tol_zero: float):
    """ A 的右零空间和左零空间，各取 k 个最小奇异值对应的奇异向量
    """
    U, s, Vh = scipy.linalg.svd(A)
    if s[-k] > tol_zero:
        raise DefectiveZeroEigenvalue(
            f'{k} eigenvalue(s) near 0 but singular value {s[-k]:.3g} > {tol_zero:.3g}; '
            'the zero eigenvalue is not semisimple'
        )
    return Vh[-k:].T, U[:, -k:]


def spectral_projection(op: NonlocalOperator, spec: SpectralResult) -> SpectralResult:
    """ 零特征值的谱投影 P = V_R (V_L^T V_R)^{-1} V_L^T

    秩等于 zero_modes；没有零特征值时 P = 0
    """
    n = op.n
    k = spec.zero_modes
    if k == 0:
        return replace(spec, P=np.zeros((n, n)), rank_P=0)

    right, left = _null_spaces(op.dense, k, spec.tol_zero)
    gram = left.T @ right
    condition = np.linalg.cond(gram)
    if not condition < MAX_PAIRING_CONDITION:
        raise DefectiveZeroEigenvalue(
            f'left/right null vectors are nearly orthogonal (condition {condition:.3g})'
        )
    P = right @ np.linalg.solve(gram, left.T)

    result = replace(spec, P=P, rank_P=k)
    if k == 1 and op.is_conservative:
        density = _density_from(left[:, 0], op)
        result = replace(result, h=density.h, clipped=density.clipped)
    logger.info(f'spectral projection: rank {k}')
    return result


def _density_from(left: np.ndarray, op: NonlocalOperator) -> InvariantDensity:
    cell = op.grid.cell_volume
    h = left / (left.sum() * cell)
    clipped = float(max(-h.min(), 0.0) / np.abs(h).max())
    if clipped > 1e-8:
        logger.warning(f'invariant density had negative entries of relative size {clipped:.3g}')
    h = np.clip(h, 0.0, None)
    h /= h.sum() * cell
    return InvariantDensity(h, clipped)


def invariant_density(op: NonlocalOperator, spec: SpectralResult = None) -> InvariantDensity:
    """ 左零向量，截断负值后归一化使 Σ h·cellvol = 1
    """
    spec = spec or eigen_spectrum(op)
    if spec.zero_modes != 1:
        raise NotConservative(
            f'invariant density needs exactly one zero mode, found {spec.zero_modes}'
        )
    _, left = _null_spaces(op.dense, 1, spec.tol_zero)
    return _density_from(left[:, 0], op)


def decay_fit(
    op: NonlocalOperator, P: np.ndarray, u0: np.ndarray, times, rtol=0.01
) -> DecayFit:
    """ 拟合 ||T(t)u0 - P u0||_∞ <= M e^{-εt}

    距离用步长减半的向后 Euler 计算，直到相邻两次的距离相对差 < rtol，
    然后对后一半时刻的 log 距离做最小二乘
    """
    times = np.asarray(times, dtype=float)
    if times.size < 4:
        raise ConfigError('decay_fit needs at least 4 times')
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ConfigError('times must be positive and increasing')

    u0 = np.asarray(u0, dtype=float)
    target = P @ u0

    def distances_of(snapshots):
        return np.abs(snapshots - target).max(axis=1)

    snapshots, dt = evolve_refined(
        op, u0, times, rtol=rtol, extrapolate=True, observe=distances_of, atol=UNDERFLOW
    )
    distances = distances_of(snapshots)

    tail = np.arange(times.size // 2, times.size)
    usable = tail[distances[tail] >= UNDERFLOW]
    truncated = usable.size < tail.size
    if truncated:
        usable = np.flatnonzero(distances >= UNDERFLOW)
        if usable.size < 2:
            raise DistanceUnderflow(
                f'distance to P u0 is below {UNDERFLOW:g} at almost every time'
            )
        logger.warning(f'distance underflow: fitting on {usable.size} time(s) only')

    slope, intercept = np.polyfit(times[usable], np.log(distances[usable]), 1)
    fitted = intercept + slope * times[usable]
    residual = float(np.sqrt(np.mean((np.log(distances[usable]) - fitted)**2)))
    d0 = float(np.abs(u0 - target).max())
    M = max(1.0, float(np.exp(intercept)) / d0) if d0 > 0 else 1.0

    result = DecayFit(times, distances, M, float(-slope), residual, usable.size, dt, truncated)
    logger.info(f'decay fit: M={result.M:.6g}, ε={result.epsilon:.6g}, residual={residual:.3g}')
    return result


def evolve_distribution(op: NonlocalOperator, nu0, t: float, dt: float) -> np.ndarray:
    """ 分布的前向演化 ν <- ν (I - dt A_nl)^{-1}
    """
    if not (t > 0 and dt > 0):
        raise ConfigError('t and dt must be positive')
    steps = max(1, int(np.ceil(t / dt - 1e-12)))
    return march(op, np.asarray(nu0, dtype=float), steps / t, steps, trans='T')


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def singular_value_decay(op: NonlocalOperator, dt: float, k=10) -> np.ndarray:
    """ 单步算子 E = (I - dt A_nl)^{-1} 的前 k 个奇异值
    """
    _check_dimension(op, config.MAX_DENSE_DIM)
    lam = 1.0 / dt
    E = lam * lu_solve(_factor(op.key, 'nonlocal', op.matrix, lam), np.eye(op.n))
    return scipy.linalg.svdvals(E)[:k]
