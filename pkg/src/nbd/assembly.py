""" 有限差分组装

Dirichlet 算子 A0 = (A_ii | A_ib)，非局部算子 A_nl = A_ii + A_ib M
"""
from __future__ import annotations

import logging
import uuid
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .coeffs import CoefficientSet, peclet_numbers
from .exceptions import ConfigError, SchemeMonotonicityWarning, ShapeMismatch
from .grid import EXTERIOR, Grid
from .measures import MeasureMatrix

logger = logging.getLogger(__name__)

SCHEMES = ('central', 'upwinded')
# 保守情形 A_nl 1 = 0 的相对容差（相对于对角元的量级）
CONSERVATION_TOL = 1e-12


def _new_key():
    return uuid.uuid4().hex


@dataclass(frozen=True, eq=False)
class DirichletOperator:
    A_ii: sparse.csr_matrix
    A_ib: sparse.csr_matrix
    grid: Grid
    coefficients: CoefficientSet
    scheme: str
    c0: np.ndarray = field(repr=False)
    key: str = field(default_factory=_new_key)

    @property
    def full_stencil(self) -> sparse.csr_matrix:
        """ (A_ii | A_ib)，作用在全网格向量上
        """
        return sparse.hstack([self.A_ii, self.A_ib]).tocsr()

    def is_monotone(self):
        """ -A 具有 M 矩阵符号结构：非对角元 >= 0，对角元 < 0
        """
        off = self.A_ii - sparse.diags(self.A_ii.diagonal())
        return bool(
            (off.nnz == 0 or off.data.min() >= 0)
            and (self.A_ib.nnz == 0 or self.A_ib.data.min() >= 0)
            and np.all(self.A_ii.diagonal() < 0)
        )


@dataclass(frozen=True, eq=False)
class NonlocalOperator:
    matrix: sparse.csr_matrix
    dirichlet: DirichletOperator
    measure: MeasureMatrix
    key: str = field(default_factory=_new_key)

    @property
    def grid(self) -> Grid:
        return self.dirichlet.grid

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def is_conservative(self):
        """ c0 ≡ 0 且每个 μ(z) 都是概率测度
        """
        return bool(np.all(self.dirichlet.c0 == 0)) and self.measure.is_conservative

    @cached_property
    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def norm_inf(self) -> float:
        return float(abs(self.matrix).sum(axis=1).max())

    def extend(self, u_i: np.ndarray) -> np.ndarray:
        """ 内部值 -> 全网格向量，边界值由 u_b = M u_i 给出
        """
        return np.concatenate([u_i, self.measure.matrix @ u_i])


def assemble_dirichlet(grid: Grid, c: CoefficientSet, scheme='upwinded') -> DirichletOperator:
    """ 组装 Dirichlet 算子

    二阶导数用三点中心差分，二维交叉项用四角点格式 /(4 hx hy)，
    漂移项按 `scheme` 使用中心差分或一阶迎风，c0 加在对角线上
    """
    if scheme not in SCHEMES:
        raise ConfigError(f'unknown scheme {scheme!r}, expected one of {SCHEMES}')
    if c.dimension != grid.dimension:
        raise ConfigError('coefficient and grid dimensions differ')

    coords = grid.interior_coords
    a, b, c0 = c.sample(coords)
    rows_all = np.arange(grid.n_interior)
    centers = grid.interior
    strides = grid.strides

    rows, targets, values = [], [], []

    def add(r, t, v):
        keep = v != 0
        rows.append(r[keep])
        targets.append(t[keep])
        values.append(v[keep])

    for k in range(grid.dimension):
        h2 = grid.h[k] ** 2
        for step in (-1, 1):
            neighbor = centers + step * strides[k]
            add(rows_all, neighbor, a[:, k, k] / h2)
            if scheme == 'central':
                add(rows_all, neighbor, step * b[:, k] / (2 * grid.h[k]))
            else:
                # 一阶迎风：b > 0 用前向差分，b < 0 用后向差分
                upwind = np.where(step * b[:, k] > 0, np.abs(b[:, k]), 0.0)
                add(rows_all, neighbor, upwind / grid.h[k])

    if grid.dimension == 2:
        # sum_{i≠j} a_ij D_i D_j u = 2 a12 D_x D_y u
        coef = 2 * a[:, 0, 1] / (4 * grid.h[0] * grid.h[1])
        for sx in (-1, 1):
            for sy in (-1, 1):
                weight = sx * sy * coef
                diagonal = centers + sx * strides[0] + sy * strides[1]
                outside = grid.node_class[diagonal] == EXTERIOR
                inside = ~outside
                add(rows_all[inside], diagonal[inside], weight[inside])
                # 角点在外部时用 u(sx,0) + u(0,sy) - u(0,0) 代替，常数和线性函数仍然精确
                add(rows_all[outside], (centers + sx * strides[0])[outside], weight[outside])
                add(rows_all[outside], (centers + sy * strides[1])[outside], weight[outside])

    rows = np.concatenate(rows)
    targets = np.concatenate(targets)
    values = np.concatenate(values)

    # 对角元取为邻居系数之和的相反数，保证常数被精确消去
    diag = -np.bincount(rows, weights=values, minlength=grid.n_interior) + c0

    interior_cols = grid.interior_index[targets]
    boundary_cols = grid.boundary_index[targets]
    to_interior = interior_cols >= 0
    to_boundary = boundary_cols >= 0
    if not np.all(to_interior | to_boundary):
        raise ShapeMismatch('stencil reaches an exterior node')

    A_ii = sparse.csr_matrix(
        (values[to_interior], (rows[to_interior], interior_cols[to_interior])),
        shape=(grid.n_interior, grid.n_interior)
    ) + sparse.diags(diag)
    A_ib = sparse.csr_matrix(
        (values[to_boundary], (rows[to_boundary], boundary_cols[to_boundary])),
        shape=(grid.n_interior, grid.n_boundary)
    )

    if scheme == 'central' and np.any(b != 0):
        peclet = peclet_numbers(c, coords, grid.h).max()
        if peclet > 1:
            message = (
                f'cell Péclet number {peclet:.3g} > 1 with the central scheme; '
                'positivity is not guaranteed'
            )
            logger.warning(message)
            warnings.warn(message, SchemeMonotonicityWarning, stacklevel=2)

    operator = DirichletOperator(
        A_ii=A_ii.tocsr(),
        A_ib=A_ib.tocsr(),
        grid=grid,
        coefficients=c,
        scheme=scheme,
        c0=c0,
    )
    logger.debug(
        f'Dirichlet operator: {grid.n_interior}×{grid.n_interior}, '
        f'{operator.A_ii.nnz + operator.A_ib.nnz} nonzeros, scheme={scheme}'
    )
    return operator


def assemble_nonlocal(d: DirichletOperator, m: MeasureMatrix) -> NonlocalOperator:
    """ 消去边界值 u_b = M u_i，得到 A_nl = A_ii + A_ib M
    """
    if d.A_ib.shape[1] != m.shape[0] or d.A_ii.shape[0] != m.shape[1]:
        raise ShapeMismatch(
            f'A_ib is {d.A_ib.shape}, M is {m.shape}; expected '
            f'({d.A_ii.shape[0]}, k) and (k, {d.A_ii.shape[0]})'
        )
    matrix = (d.A_ii + d.A_ib @ m.matrix).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()

    operator = NonlocalOperator(matrix=matrix, dirichlet=d, measure=m)
    if operator.is_conservative:
        defect = conservation_defect(operator)
        if defect > CONSERVATION_TOL:
            logger.warning(f'conservative operator has |A_nl 1| = {defect:.3g} (relative)')
    return operator


def _scale(op: NonlocalOperator) -> float:
    return max(1.0, float(np.abs(op.dirichlet.A_ii.diagonal()).max()))


def conservation_defect(op: NonlocalOperator) -> float:
    """ |A_nl 1|_∞ 相对于对角元最大值
    """
    return float(np.abs(op.matrix @ np.ones(op.n)).max()) / _scale(op)


def closed_classes(op: NonlocalOperator):
    """ 生成元图的闭类：强连通、没有流出的边、行和为零

    闭类的个数就是零特征值的重数，也就是谱投影 P 的秩
    """
    A = op.matrix.tocoo()
    off = A.row != A.col
    rows, cols = A.row[off], A.col[off]
    pattern = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=A.shape
    )
    n_classes, labels = csgraph.connected_components(
        pattern, directed=True, connection='strong'
    )

    open_class = np.zeros(n_classes, dtype=bool)
    leaving = (labels[rows] != labels[cols]) & (A.data[off] > 0)
    open_class[labels[rows[leaving]]] = True
    # 行和小于零表示有概率被杀死
    lossy = np.abs(op.matrix @ np.ones(op.n)) > CONSERVATION_TOL * _scale(op) * 10
    open_class[labels[lossy]] = True

    return [np.flatnonzero(labels == k) for k in range(n_classes) if not open_class[k]]
