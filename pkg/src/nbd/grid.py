""" 区域与网格

区域 Ω 由若干轴对齐的盒子（一维为区间，二维为矩形）或者二维指示表达式给出。
网格为均匀格点，节点按坐标字典序编号（先 y 后 x），分为内部、边界、外部三类。
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import ConfigError, EmptyDomain, ResolutionTooCoarse
from .expr import Expr, parse_expr, sample

logger = logging.getLogger(__name__)

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
MIN_RESOLUTION = 4
# 判断节点是否落在开区域内部时使用的相对容差
_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    name: str = ''

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def overlaps(self, other: 'Box'):
        return all(
            a_lo < b_hi and b_lo < a_hi
            for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi)
        )


@dataclass(frozen=True)
class DomainSpec:
    """ 计算区域

    `pieces` 为互不相交的开盒子；二维时也可以用 `indicator` 表达式（大于 0 为区域内），
    此时 `bbox` 必须给出。
    """
    dimension: int
    pieces: Tuple[Box, ...] = ()
    indicator: Optional[Expr] = None
    bbox: Optional[Box] = None
    indicator_source: str = ''

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f'dimension must be 1 or 2, got {self.dimension}')
        if self.indicator is not None:
            if self.dimension != 2:
                raise ConfigError('indicator domains are two-dimensional')
            if self.bbox is None:
                raise ConfigError('indicator domains need a bounding box')
        elif not self.pieces:
            raise ConfigError('domain has no pieces')

        for piece in self.pieces:
            if len(piece.lo) != self.dimension or len(piece.hi) != self.dimension:
                raise ConfigError(f'piece {piece} does not match dimension')
            if any(hi <= lo for lo, hi in zip(piece.lo, piece.hi)):
                raise ConfigError(f'piece {piece} has no volume')
        for a, b in itertools.combinations(self.pieces, 2):
            if a.overlaps(b):
                raise ConfigError(f'pieces {a} and {b} overlap')

        if self.bbox is None:
            lo = tuple(np.min([p.lo for p in self.pieces], axis=0).tolist())
            hi = tuple(np.max([p.hi for p in self.pieces], axis=0).tolist())
            object.__setattr__(self, 'bbox', Box(lo, hi))
        for piece in self.pieces:
            if any(p < b for p, b in zip(piece.lo, self.bbox.lo)) or any(
                p > b for p, b in zip(piece.hi, self.bbox.hi)
            ):
                raise ConfigError(f'bounding box does not contain {piece}')

    @classmethod
    def intervals(cls, intervals: Sequence[Sequence[float]], names=None):
        names = names or [''] * len(intervals)
        return cls(
            1,
            tuple(
                Box((float(a),), (float(b),), name)
                for (a, b), name in zip(intervals, names)
            )
        )

    @classmethod
    def rectangles(cls, rectangles, names=None):
        names = names or [''] * len(rectangles)
        return cls(
            2,
            tuple(
                Box(tuple(map(float, lo)), tuple(map(float, hi)), name)
                for (lo, hi), name in zip(rectangles, names)
            )
        )

    @classmethod
    def masked(cls, indicator: str, lo, hi):
        return cls(
            2,
            indicator=parse_expr(indicator, ('x', 'y')),
            bbox=Box(tuple(map(float, lo)), tuple(map(float, hi))),
            indicator_source=indicator
        )

    @classmethod
    def from_dict(cls, data: dict):
        """ 从场景 JSON 的 `domain` 段构造
        """
        dimension = int(data.get('dimension', 1))
        if 'indicator' in data:
            bbox = data.get('bbox') or {}
            if 'lo' not in bbox or 'hi' not in bbox:
                raise ConfigError('domain.bbox needs lo and hi')
            return cls.masked(data['indicator'], bbox['lo'], bbox['hi'])

        boxes = []
        for i, piece in enumerate(data.get('pieces', [])):
            if isinstance(piece, dict):
                lo, hi = piece['lo'], piece['hi']
                name = str(piece.get('name', f'piece{i}'))
            else:
                lo, hi = piece
                name = f'piece{i}'
            lo = [lo] if np.isscalar(lo) else lo
            hi = [hi] if np.isscalar(hi) else hi
            boxes.append(
                Box(tuple(map(float, lo)), tuple(map(float, hi)), name)
            )
        bbox = None
        if 'bbox' in data:
            bbox = Box(
                tuple(map(float, data['bbox']['lo'])),
                tuple(map(float, data['bbox']['hi']))
            )
        return cls(dimension, tuple(boxes), bbox=bbox)

    def piece_index(self, name: str) -> int:
        for i, piece in enumerate(self.pieces):
            if piece.name == name:
                return i
        raise ConfigError(f'domain has no piece named {name!r}')


@dataclass(frozen=True, eq=False)
class Grid:
    """ 均匀网格

    全局编号 g = j * nx + i（二维），一维时 g = i。
    "全网格向量" 按 [内部节点; 边界节点] 的顺序排列。
    """
    domain: DomainSpec
    n: int
    h: Tuple[float, ...]
    axes: Tuple[np.ndarray, ...]
    node_class: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    labels: np.ndarray
    n_components: int
    piece_of: np.ndarray = field(repr=False)

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def shape(self):
        """ numpy 形状，二维为 (ny, nx)
        """
        return tuple(len(a) for a in reversed(self.axes))

    @property
    def strides(self):
        """ 沿 x、y 方向移动一格时全局编号的增量
        """
        return (1, len(self.axes[0]))[:self.dimension]

    @property
    def n_interior(self):
        return len(self.interior)

    @property
    def n_boundary(self):
        return len(self.boundary)

    @property
    def n_active(self):
        return self.n_interior + self.n_boundary

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @cached_property
    def interior_index(self) -> np.ndarray:
        index = np.full(self.node_class.size, -1, dtype=np.int64)
        index[self.interior] = np.arange(self.n_interior)
        return index

    @cached_property
    def boundary_index(self) -> np.ndarray:
        index = np.full(self.node_class.size, -1, dtype=np.int64)
        index[self.boundary] = np.arange(self.n_boundary)
        return index

    @cached_property
    def active_index(self) -> np.ndarray:
        """ 全局编号 -> 全网格向量中的位置
        """
        index = np.full(self.node_class.size, -1, dtype=np.int64)
        index[self.interior] = np.arange(self.n_interior)
        index[self.boundary] = self.n_interior + np.arange(self.n_boundary)
        return index

    def coords(self, nodes) -> np.ndarray:
        """ 全局编号 -> 坐标 (k, d)
        """
        multi = np.unravel_index(np.asarray(nodes), self.shape)
        # unravel 给出 (j, i)，坐标按 (x, y) 排列
        return np.column_stack(
            [self.axes[k][multi[self.dimension - 1 - k]] for k in range(self.dimension)]
        )

    @cached_property
    def interior_coords(self) -> np.ndarray:
        return self.coords(self.interior)

    @cached_property
    def boundary_coords(self) -> np.ndarray:
        return self.coords(self.boundary)

    @cached_property
    def active_coords(self) -> np.ndarray:
        return np.vstack([self.interior_coords, self.boundary_coords])

    @cached_property
    def _boundary_tree(self):
        return cKDTree(self.boundary_coords)

    @cached_property
    def _interior_tree(self):
        return cKDTree(self.interior_coords)

    def nearest_boundary(self, points) -> np.ndarray:
        """ 最近的边界节点在边界编号中的位置
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self._boundary_tree.query(points)[1]

    def nearest_interior(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self._interior_tree.query(points)[1]

    def contains(self, points) -> np.ndarray:
        """ 连续意义下的 x ∈ Ω
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.domain.indicator is not None:
            box = self.domain.bbox
            inside = np.all(
                (points > np.asarray(box.lo)) & (points < np.asarray(box.hi)),
                axis=1
            )
            if not np.any(inside):
                return inside
            inside[inside] = sample(self.domain.indicator, points[inside]) > 0
            return inside

        inside = np.zeros(len(points), dtype=bool)
        for piece in self.domain.pieces:
            inside |= np.all(
                (points > np.asarray(piece.lo)) & (points < np.asarray(piece.hi)),
                axis=1
            )
        return inside

    def locate(self, point):
        """ 返回包含 point 的格子左下角的多重下标 (i, j) 以及格内相对坐标
        """
        point = np.asarray(point, dtype=float)
        corner, frac = [], []
        for k in range(self.dimension):
            t = (point[k] - self.axes[k][0]) / self.h[k]
            i = int(np.clip(np.floor(t), 0, len(self.axes[k]) - 2))
            corner.append(i)
            frac.append(float(np.clip(t - i, 0.0, 1.0)))
        return tuple(corner), tuple(frac)

    def cell_corners(self, point):
        """ 格子的 2^d 个角点：[(全局编号, 多线性权重)]
        """
        corner, frac = self.locate(point)
        result = []
        for offsets in itertools.product((0, 1), repeat=self.dimension):
            weight = 1.0
            node = 0
            for k, o in enumerate(offsets):
                weight *= frac[k] if o else 1.0 - frac[k]
                node += (corner[k] + o) * self.strides[k]
            result.append((node, weight))
        return result

    def interpolate(self, values: np.ndarray, point) -> float:
        """ 全网格向量在 point 处的多线性插值

        落在外部节点上的角点被丢弃，其余权重重新归一化
        """
        total, weight_sum = 0.0, 0.0
        for node, weight in self.cell_corners(point):
            position = self.active_index[node]
            if position < 0 or weight == 0.0:
                continue
            total += weight * values[position]
            weight_sum += weight
        if weight_sum == 0.0:
            return float(values[self.nearest_interior(point)[0]])
        return total / weight_sum


def _lattice_axes(domain: DomainSpec, n: int):
    h = 1.0 / n
    axes = []
    for lo, hi in zip(domain.bbox.lo, domain.bbox.hi):
        cells = int(np.ceil((hi - lo) * n - _EPS))
        axes.append(lo + h * np.arange(cells + 1))
    return tuple(axes), (h,) * domain.dimension


def build_grid(domain: DomainSpec, n: int) -> Grid:
    """ 构造网格

    `n` 为单位长度上的格数，步长 h = 1/n
    """
    if n < MIN_RESOLUTION:
        raise ResolutionTooCoarse(f'n must be at least {MIN_RESOLUTION}, got {n}')
    for piece in domain.pieces:
        spans = (np.subtract(piece.hi, piece.lo)) * n
        if np.any(spans < 2 - _EPS):
            raise ResolutionTooCoarse(
                f'piece {piece.name or piece} spans fewer than 2 cells at n={n}'
            )

    axes, h = _lattice_axes(domain, n)
    shape = tuple(len(a) for a in reversed(axes))
    # 网格坐标，形状为 numpy 形状，最后一维为 x
    mesh = np.meshgrid(*reversed(axes), indexing='ij')
    points = np.column_stack([m.ravel() for m in reversed(mesh)])

    piece_of = np.full(points.shape[0], -1, dtype=np.int64)
    if domain.indicator is not None:
        box = domain.bbox
        tol = _EPS * h[0]
        inside = np.all(
            (points > np.asarray(box.lo) + tol)
            & (points < np.asarray(box.hi) - tol),
            axis=1
        )
        interior = inside.copy()
        interior[inside] = sample(domain.indicator, points[inside]) > 0
    else:
        interior = np.zeros(points.shape[0], dtype=bool)
        for k, piece in enumerate(domain.pieces):
            tol = _EPS * h[0]
            member = np.all(
                (points > np.asarray(piece.lo) + tol)
                & (points < np.asarray(piece.hi) - tol),
                axis=1
            )
            interior |= member
            piece_of[member] = k

    if not np.any(interior):
        raise EmptyDomain('domain has no interior node at this resolution')

    interior_nd = interior.reshape(shape)
    # 边界节点：不在内部，但至少有一个轴向邻居在内部
    padded = np.pad(interior_nd, 1)
    near = np.zeros_like(interior_nd)
    for axis in range(len(shape)):
        for step in (-1, 1):
            near |= np.roll(padded, step, axis=axis)[
                tuple(slice(1, -1) for _ in shape)
            ]
    boundary_nd = near & ~interior_nd

    node_class = np.full(points.shape[0], EXTERIOR, dtype=np.int8)
    node_class[interior] = INTERIOR
    node_class[boundary_nd.ravel()] = BOUNDARY

    labels_nd, n_components = ndimage.label(interior_nd)
    interior_nodes = np.flatnonzero(interior)
    labels = labels_nd.ravel()[interior_nodes] - 1

    grid = Grid(
        domain=domain,
        n=n,
        h=h,
        axes=axes,
        node_class=node_class,
        interior=interior_nodes,
        boundary=np.flatnonzero(node_class == BOUNDARY),
        labels=labels,
        n_components=int(n_components),
        piece_of=piece_of[interior_nodes],
    )
    logger.debug(
        f'grid n={n}: {grid.n_interior} interior, {grid.n_boundary} boundary, '
        f'{grid.n_components} component(s)'
    )
    return grid


def connected_components(grid: Grid):
    """ 内部节点按轴向邻接的连通分量：(分量个数, 每个内部节点的标号)
    """
    return grid.n_components, grid.labels


def boundary_neighbors(grid: Grid):
    """ 每个边界节点轴向相邻的内部节点（内部编号）
    """
    result = []
    for node in grid.boundary:
        multi = np.unravel_index(node, grid.shape)
        neighbors = []
        for k in range(grid.dimension):
            axis = grid.dimension - 1 - k
            for step in (-1, 1):
                index = list(multi)
                index[axis] += step
                if 0 <= index[axis] < grid.shape[axis]:
                    g = np.ravel_multi_index(tuple(index), grid.shape)
                    if grid.interior_index[g] >= 0:
                        neighbors.append(int(grid.interior_index[g]))
        result.append(neighbors)
    return result
