""" 场景

一个场景是一份 JSON 文档，顶层键为 name、domain、coefficients、measure、solver、
evolve、spectral、decay、mc。命令行的 `--set key.path=value` 在读取文件之后应用
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import config
from .assembly import DirichletOperator, NonlocalOperator, assemble_dirichlet, assemble_nonlocal
from .coeffs import CoefficientSet, ValidationReport, validate_coefficients
from .exceptions import ConfigError
from .expr import Expr, parse_expr, sample
from .grid import MIN_RESOLUTION, DomainSpec, Grid, build_grid
from .mc import ProcessConfig
from .measures import MeasureMatrix, MeasureSpec, discretize_measures

logger = logging.getLogger(__name__)

SECTIONS = (
    'name', 'domain', 'coefficients', 'measure', 'solver', 'evolve', 'spectral', 'decay', 'mc'
)


def _parse_value(text: str):
    """ JSON 能解析的按 JSON，其余当作字符串
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _typed(section: str, values: dict, key: str, cast, default):
    """ 取出并转换一项设置，失败时报告完整的键路径
    """
    value = values.get(key, default)
    if value is None:
        return None
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f'{section}.{key}: cannot read {value!r} as {cast.__name__}') from None


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """ 应用 `a.b.c=value` 形式的覆盖，返回新字典
    """
    data = copy.deepcopy(data)
    for item in overrides:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f'override {item!r} is not of the form key.path=value')
        path = key.strip().split('.')
        node = data
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f'override {key!r}: {part!r} is not a section')
            node = child
        node[path[-1]] = _parse_value(value)
    return data


@dataclass(frozen=True)
class Scenario:
    name: str
    data: dict = field(repr=False)
    domain: DomainSpec
    n: int
    coefficients: CoefficientSet
    measure: MeasureSpec
    scheme: str = 'upwinded'
    tol: float = config.SOLVER_TOL
    max_iter: int = config.SOLVER_MAX_ITER
    tol_zero: Optional[float] = None
    process: Optional[ProcessConfig] = None

    @classmethod
    def from_dict(cls, data: dict, name='scenario'):
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f'unknown scenario section(s): {", ".join(unknown)}')
        if 'domain' not in data:
            raise ConfigError('scenario has no domain')

        domain_data = data['domain']
        if not isinstance(domain_data, dict):
            raise ConfigError('domain must be an object')
        try:
            domain = DomainSpec.from_dict(domain_data)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f'domain: {type(e).__name__}: {e}') from None
        n = _typed('domain', domain_data, 'n', int, 32)
        if n < MIN_RESOLUTION:
            raise ConfigError(f'domain.n must be at least {MIN_RESOLUTION}, got {n}')
        solver = data.get('solver', {})
        spectral = data.get('spectral', {})
        mc = data.get('mc')

        process = None
        if mc:
            process = ProcessConfig(
                dt=_typed('mc', mc, 'dt', float, 1e-3),
                n_paths=_typed('mc', mc, 'n_paths', int, 10000),
                seed=_typed('mc', mc, 'seed', int, 0),
                chunk_size=_typed('mc', mc, 'chunk_size', int, config.MC_CHUNK_SIZE),
            )

        return cls(
            name=str(data.get('name', name)),
            data=data,
            domain=domain,
            n=n,
            coefficients=CoefficientSet.from_dict(
                data.get('coefficients', {}), domain.dimension
            ),
            measure=MeasureSpec.from_dict(data.get('measure', {})),
            scheme=str(solver.get('scheme', 'upwinded')),
            tol=_typed('solver', solver, 'tol', float, config.SOLVER_TOL),
            max_iter=_typed('solver', solver, 'max_iter', int, config.SOLVER_MAX_ITER),
            tol_zero=_typed('spectral', spectral, 'tol_zero', float, None),
            process=process,
        )

    def section(self, key) -> dict:
        return self.data.get(key, {})

    def expression(self, source) -> Expr:
        return parse_expr(str(source), ('x', 'y')[:self.domain.dimension])


def load_scenario(path, overrides: Iterable[str] = ()) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f'scenario file {path} does not exist')
    try:
        with open(path, encoding='UTF-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path}: invalid JSON: {e}') from e
    if not isinstance(data, dict):
        raise ConfigError(f'{path}: top level must be an object')
    return Scenario.from_dict(apply_overrides(data, overrides), name=path.stem)


class Problem:
    """ 场景离散化后的全部对象，按需构造
    """
    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    @cached_property
    def grid(self) -> Grid:
        return build_grid(self.scenario.domain, self.scenario.n)

    @cached_property
    def validation(self) -> ValidationReport:
        return validate_coefficients(self.scenario.coefficients, self.grid)

    @cached_property
    def dirichlet(self) -> DirichletOperator:
        self.validation
        return assemble_dirichlet(self.grid, self.scenario.coefficients, self.scenario.scheme)

    @cached_property
    def measure(self) -> MeasureMatrix:
        return discretize_measures(self.scenario.measure, self.grid)

    @cached_property
    def operator(self) -> NonlocalOperator:
        operator = assemble_nonlocal(self.dirichlet, self.measure)
        logger.info(
            f'{self.scenario.name}: {self.grid.n_interior} interior, '
            f'{self.grid.n_boundary} boundary nodes, '
            f'conservative={operator.is_conservative}'
        )
        return operator

    def interior_vector(self, source) -> np.ndarray:
        """ 表达式在内部节点上的取值
        """
        return sample(self.scenario.expression(source), self.grid.interior_coords)
