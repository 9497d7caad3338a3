""" 边界测度

测度族 μ(z, ·) 按边界区域给出，离散成 (边界节点 × 内部节点) 的非负矩阵 M，
使得非局部边界条件 u(z) = ∫ u dμ(z) 变成 u_b = M u_i
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse

from .exceptions import AtomOutsideDomain, InvalidMeasure, MassOutOfRange
from .expr import Expr, parse_expr, sample, to_source
from .grid import Grid, boundary_neighbors

logger = logging.getLogger(__name__)

# 质量超出 [0, 1] 的容许量，超出部分先报错，剩余部分截断
MASS_TOL = 1e-9
ROW_TOL = 1e-12


@dataclass(frozen=True)
class Zero:
    def mass(self, z):
        return 0.0


@dataclass(frozen=True)
class Atoms:
    points: Tuple[Tuple[float, ...], ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise InvalidMeasure('atoms need one weight per point')
        if any(w < 0 for w in self.weights):
            raise InvalidMeasure('atom weights must be nonnegative')

    def mass(self, z):
        return float(sum(self.weights))


@dataclass(frozen=True)
class Density:
    """ 密度 w(z, x) 与总质量 m(z)，z 的坐标在表达式里写作 zx、zy
    """
    w: Expr
    total: Expr

    def mass(self, z):
        return float(sample(self.total, np.atleast_2d(z), **_z_env(z))[0])


@dataclass(frozen=True)
class Mixture:
    parts: Tuple[Tuple[float, 'Component'], ...]

    def __post_init__(self):
        coefs = [c for c, _ in self.parts]
        if any(c < 0 for c in coefs):
            raise InvalidMeasure('mixture coefficients must be nonnegative')
        if abs(sum(coefs) - 1.0) > MASS_TOL:
            raise InvalidMeasure(f'mixture coefficients sum to {sum(coefs)}, not 1')

    def mass(self, z):
        return float(sum(c * part.mass(z) for c, part in self.parts))


Component = Union[Zero, Atoms, Density, Mixture]


@dataclass(frozen=True)
class Selector:
    """ 边界区域：`all`，某个命名块 `piece`，或者表达式 `where` 大于 0 的边界点
    """
    kind: str = 'all'
    piece: str = ''
    where: Optional[Expr] = None


@dataclass(frozen=True)
class Region:
    selector: Selector
    component: Component


@dataclass(frozen=True)
class MeasureSpec:
    """ 按顺序匹配，每个边界节点使用第一个匹配的区域，都不匹配则为零测度
    """
    regions: Tuple[Region, ...] = ()

    @classmethod
    def zero(cls):
        return cls(())

    @classmethod
    def uniform(cls, component: Component):
        return cls((Region(Selector(), component), ))

    @classmethod
    def from_dict(cls, data: dict):
        if not data or data.get('kind') == 'zero':
            return cls.zero()
        regions = []
        for item in data.get('regions', []):
            regions.append(
                Region(_selector_from(item.get('select', 'all')), _component_from(item))
            )
        return cls(tuple(regions))

    def describe(self) -> dict:
        """ 可序列化描述，能被 from_dict 读回
        """
        if not self.regions:
            return {'kind': 'zero'}
        return {
            'regions': [
                dict(describe(region.component), select=_selector_source(region.selector))
                for region in self.regions
            ]
        }


def _selector_source(selector: Selector):
    if selector.kind == 'piece':
        return {'piece': selector.piece}
    if selector.kind == 'where':
        return {'where': to_source(selector.where)}
    return 'all'


def _selector_from(data) -> Selector:
    if data == 'all':
        return Selector()
    if isinstance(data, dict) and 'piece' in data:
        return Selector('piece', piece=str(data['piece']))
    if isinstance(data, dict) and 'where' in data:
        return Selector('where', where=parse_expr(data['where'], ('x', 'y')))
    raise InvalidMeasure(f'unknown selector {data!r}')


def _component_from(data: dict) -> Component:
    if data.get('zero'):
        return Zero()
    if 'atoms' in data:
        points, weights = [], []
        for atom in data['atoms']:
            at = atom['at']
            points.append(tuple(map(float, [at] if np.isscalar(at) else at)))
            weights.append(float(atom.get('weight', 1.0)))
        return Atoms(tuple(points), tuple(weights))
    if 'density' in data:
        density = data['density']
        variables = ('x', 'y', 'zx', 'zy')
        return Density(
            parse_expr(str(density.get('w', '1')), variables),
            parse_expr(str(density.get('mass', '1')), ('zx', 'zy')),
        )
    if 'mixture' in data:
        return Mixture(
            tuple((float(part['coef']), _component_from(part)) for part in data['mixture'])
        )
    raise InvalidMeasure(f'unknown measure component {sorted(data)}')


def _z_env(z):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    env = {'zx': z[0]}
    if len(z) > 1:
        env['zy'] = z[1]
    return env


def describe(component: Component) -> dict:
    """ 组件的可序列化描述，写入运行清单
    """
    if isinstance(component, Zero):
        return {'zero': True}
    if isinstance(component, Atoms):
        return {
            'atoms': [
                {'at': list(p), 'weight': w}
                for p, w in zip(component.points, component.weights)
            ]
        }
    if isinstance(component, Density):
        return {'density': {'w': to_source(component.w), 'mass': to_source(component.total)}}
    return {
        'mixture': [dict(describe(part), coef=c) for c, part in component.parts]
    }


@dataclass(frozen=True, eq=False)
class MeasureMatrix:
    """ 离散测度 M（边界 × 内部），每行是一个边界节点上的 μ(z)
    """
    matrix: sparse.csr_matrix
    masses: np.ndarray

    def __post_init__(self):
        if self.matrix.nnz and self.matrix.data.min() < 0:
            raise InvalidMeasure('measure matrix has negative entries')
        sums = self.row_sums
        if np.any(sums > 1 + ROW_TOL):
            raise MassOutOfRange(f'row mass {sums.max()!r} exceeds 1')

    @classmethod
    def zero(cls, grid: Grid):
        return cls(
            sparse.csr_matrix((grid.n_boundary, grid.n_interior)),
            np.zeros(grid.n_boundary)
        )

    @classmethod
    def from_dense(cls, array):
        array = np.asarray(array, dtype=float)
        return cls(sparse.csr_matrix(array), array.sum(axis=1))

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def is_conservative(self):
        """ 每个 μ(z) 都是概率测度
        """
        return bool(np.all(np.abs(self.row_sums - 1.0) <= ROW_TOL))

    def dominated_by(self, other: 'MeasureMatrix', tol=0.0):
        """ 逐元素 self <= other，返回 (是否成立, 最大超出量)
        """
        excess = (self.matrix - other.matrix).toarray()
        worst = float(max(excess.max(initial=0.0), 0.0))
        return worst <= tol, worst


def _splat(grid: Grid, point):
    """ 单位质量原子按多线性插值权重分到所在格子的内部角点上

    不是内部节点的角点，其权重按比例分给内部角点
    """
    if not grid.contains(point)[0]:
        raise AtomOutsideDomain(f'atom at {point} is not inside the domain')

    cols, weights = [], []
    for node, weight in grid.cell_corners(point):
        col = grid.interior_index[node]
        if col >= 0 and weight > 0:
            cols.append(int(col))
            weights.append(weight)

    if not cols:
        return np.array([grid.nearest_interior(point)[0]]), np.ones(1)

    weights = np.asarray(weights) / np.sum(weights)
    # 让权重之和严格等于 1
    weights[-1] = 1.0 - weights[:-1].sum()
    return np.asarray(cols), weights


def _check_mass(m, where):
    if m < -MASS_TOL or m > 1 + MASS_TOL:
        raise MassOutOfRange(f'mass {m!r} outside [0, 1] at {where}')
    return float(np.clip(m, 0.0, 1.0))


def _row(component: Component, grid: Grid, z, splats: dict) -> Tuple[np.ndarray, float]:
    """ 返回稠密行（长度为内部节点数）以及解析质量

    splats 缓存本次离散化中已经分配过的原子
    """
    row = np.zeros(grid.n_interior)
    if isinstance(component, Zero):
        return row, 0.0

    if isinstance(component, Atoms):
        mass = _check_mass(component.mass(z), z)
        for point, weight in zip(component.points, component.weights):
            if point not in splats:
                splats[point] = _splat(grid, point)
            cols, weights = splats[point]
            np.add.at(row, cols, weight * weights)
        if row.sum() > mass:
            row *= mass / row.sum()
        return row, mass

    if isinstance(component, Density):
        mass = _check_mass(component.mass(z), z)
        # 以内部节点为中心的格子上的中点求积
        raw = sample(component.w, grid.interior_coords, **_z_env(z)) * grid.cell_volume
        if np.any(raw < 0):
            raise InvalidMeasure(f'density is negative for z={tuple(z)}')
        total = raw.sum()
        if mass > 0 and total <= 0:
            raise InvalidMeasure(f'density vanishes on the grid for z={tuple(z)}')
        if mass > 0:
            row = raw * (mass / total)
        return row, mass

    mass = 0.0
    for coef, part in component.parts:
        part_row, part_mass = _row(part, grid, z, splats)
        row += coef * part_row
        mass += coef * part_mass
    return row, _check_mass(mass, z)


def select_regions(spec: MeasureSpec, grid: Grid) -> np.ndarray:
    """ 每个边界节点匹配到的区域编号，-1 表示没有匹配
    """
    choice = np.full(grid.n_boundary, -1, dtype=np.int64)
    neighbors = None
    for k, region in enumerate(spec.regions):
        selector = region.selector
        if selector.kind == 'all':
            hit = np.ones(grid.n_boundary, dtype=bool)
        elif selector.kind == 'piece':
            if neighbors is None:
                neighbors = boundary_neighbors(grid)
            piece = grid.domain.piece_index(selector.piece)
            hit = np.array(
                [any(grid.piece_of[i] == piece for i in nb) for nb in neighbors],
                dtype=bool
            )
        else:
            hit = sample(selector.where, grid.boundary_coords) > 0
        choice[(choice < 0) & hit] = k
    return choice


def discretize_measures(spec: MeasureSpec, grid: Grid) -> MeasureMatrix:
    """ 离散化测度族

    原子按多线性插值分配，密度在内部格子上做中点求积后缩放到解析质量 m(z)
    """
    choice = select_regions(spec, grid)
    splats = {}
    rows, cols, vals = [], [], []
    masses = np.zeros(grid.n_boundary)
    for k, z in enumerate(grid.boundary_coords):
        if choice[k] < 0:
            continue
        row, mass = _row(spec.regions[choice[k]].component, grid, z, splats)
        nonzero = np.flatnonzero(row)
        rows.append(np.full(len(nonzero), k))
        cols.append(nonzero)
        vals.append(row[nonzero])
        masses[k] = mass

    if rows:
        matrix = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_boundary, grid.n_interior)
        )
    else:
        matrix = sparse.csr_matrix((grid.n_boundary, grid.n_interior))

    measure = MeasureMatrix(matrix, masses)
    defect = np.abs(measure.row_sums - masses).max(initial=0.0)
    if defect > ROW_TOL:
        raise InvalidMeasure(f'row masses deviate from m(z) by {defect:.3g}')
    logger.debug(
        f'measure: {matrix.nnz} nonzeros, row masses in '
        f'[{masses.min(initial=0):.6g}, {masses.max(initial=0):.6g}]'
    )
    return measure
