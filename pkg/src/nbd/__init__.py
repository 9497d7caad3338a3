""" 非局部边界条件的椭圆算子

需要暴露给外面的东西
"""
from .app import Session, on_command
from .assembly import assemble_dirichlet, assemble_nonlocal
from .coeffs import CoefficientSet, validate_coefficients
from .config import VERSION as __version__
from .grid import DomainSpec, build_grid
from .measures import MeasureSpec, discretize_measures
from .rundata import RunData
from .scenario import Problem, Scenario, load_scenario
