""" 系数

扩散矩阵 a、漂移 b、势 c0 以及椭圆常数 eta，在网格节点上逐点检验
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, ValidationFailed
from .expr import Expr, Num, free_variables, parse_expr, sample, to_source
from .grid import Grid

logger = logging.getLogger(__name__)

SPATIAL_VARIABLES = ('x', 'y')


@dataclass(frozen=True)
class CoefficientSet:
    a: Tuple[Tuple[Expr, ...], ...]
    b: Tuple[Expr, ...]
    c0: Expr
    eta: float

    def __post_init__(self):
        d = len(self.b)
        if len(self.a) != d or any(len(row) != d for row in self.a):
            raise ConfigError('a must be a d×d matrix matching the length of b')
        if not self.eta > 0:
            raise ConfigError(f'eta must be positive, got {self.eta}')

    @property
    def dimension(self):
        return len(self.b)

    @classmethod
    def from_sources(cls, a, b, c0='0', eta=1.0):
        """ 从表达式字符串构造，a 可以是 d×d 列表，一维时也可以是单个字符串
        """
        if isinstance(a, str):
            a = [[a]]
        if isinstance(b, str):
            b = [b]
        variables = SPATIAL_VARIABLES[:len(b)]
        return cls(
            a=tuple(tuple(parse_expr(str(e), variables) for e in row) for row in a),
            b=tuple(parse_expr(str(e), variables) for e in b),
            c0=parse_expr(str(c0), variables),
            eta=float(eta),
        )

    @classmethod
    def from_dict(cls, data: dict, dimension: int):
        d = dimension
        identity = [['1' if i == j else '0' for j in range(d)] for i in range(d)]
        return cls.from_sources(
            data.get('a', identity),
            data.get('b', ['0'] * d),
            data.get('c0', '0'),
            data.get('eta', 1.0),
        )

    def expressions(self):
        """ 全部表达式，按 a、b、c0 的顺序
        """
        return [e for row in self.a for e in row] + list(self.b) + [self.c0]

    def is_constant(self):
        return not any(free_variables(e) for e in self.expressions())

    def is_diagonal(self):
        """ 交叉项在语法上恒为零
        """
        return all(
            isinstance(self.a[i][j], Num) and self.a[i][j].value == 0
            for i in range(self.dimension)
            for j in range(self.dimension) if i != j
        )

    def sample(self, coords: np.ndarray):
        """ 在 (N, d) 个坐标上采样，返回 a (N,d,d)、b (N,d)、c0 (N,)
        """
        d = self.dimension
        a = np.empty((len(coords), d, d))
        for i in range(d):
            for j in range(d):
                a[:, i, j] = sample(self.a[i][j], coords)
        b = np.column_stack([sample(e, coords) for e in self.b])
        c0 = sample(self.c0, coords)
        return a, b, c0

    def sources(self):
        return {
            'a': [[to_source(e) for e in row] for row in self.a],
            'b': [to_source(e) for e in self.b],
            'c0': to_source(self.c0),
            'eta': self.eta,
        }


@dataclass(frozen=True)
class ValidationReport:
    min_eigenvalue: float
    max_c0: float
    max_symmetry_defect: float
    eta: float
    passed: bool
    node: Optional[int] = None
    quantity: str = ''
    message: str = ''


def validate_coefficients(c: CoefficientSet, grid: Grid, strict=True):
    """ 检验对称性、椭圆性和 c0 <= 0

    在全部内部与边界节点上采样。`strict` 时不通过则抛出 ValidationFailed
    """
    if c.dimension != grid.dimension:
        raise ConfigError(
            f'coefficients are {c.dimension}-dimensional, grid is {grid.dimension}-dimensional'
        )
    nodes = np.sort(np.concatenate([grid.interior, grid.boundary]))
    a, _, c0 = c.sample(grid.coords(nodes))

    defect = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    # 对称部分的特征值；不对称时报告以对称性失败为准
    eigenvalues = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))[:, 0]

    node, quantity, message = None, '', ''
    if np.any(defect > 0):
        k = int(np.argmax(defect > 0))
        node, quantity = int(nodes[k]), 'symmetry'
        message = f'a is not symmetric at node {node} (defect {defect[k]:.3g})'
    elif np.any(eigenvalues < c.eta):
        k = int(np.argmax(eigenvalues < c.eta))
        node, quantity = int(nodes[k]), 'ellipticity'
        message = (
            f'smallest eigenvalue {eigenvalues[k]:.6g} of a is below '
            f'eta={c.eta:g} at node {node}'
        )
    elif np.any(c0 > 0):
        k = int(np.argmax(c0 > 0))
        node, quantity = int(nodes[k]), 'c0'
        message = f'c0 > 0 at node {node}'

    report = ValidationReport(
        min_eigenvalue=float(eigenvalues.min()),
        max_c0=float(c0.max()),
        max_symmetry_defect=float(defect.max()),
        eta=c.eta,
        passed=node is None,
        node=node,
        quantity=quantity,
        message=message,
    )
    if report.passed:
        logger.debug(
            f'coefficients valid: min eigenvalue {report.min_eigenvalue:.6g}, '
            f'max c0 {report.max_c0:.6g}'
        )
    elif strict:
        raise ValidationFailed(message, report)
    return report


def peclet_numbers(c: CoefficientSet, coords: np.ndarray, h: Sequence[float]):
    """ 网格 Péclet 数 |b_j| h / (2 a_jj)，形状 (N, d)
    """
    a, b, _ = c.sample(coords)
    diag = np.diagonal(a, axis1=1, axis2=2)
    return np.abs(b) * np.asarray(h) / (2 * diag)
