""" 预解式插件

输出 `<name>.solve.csv`：node_x[,node_y],u（复数 λ 时为 u_re,u_im），
先内部节点后边界节点
"""
import numpy as np

from nbd import Session, on_command
from nbd.exceptions import ConfigError
from nbd.rundata import coordinate_header
from nbd.solver import METHODS, ResolventRequest, as_lambda, resolvent_with_fallback


def parse_lambda(value):
    try:
        return as_lambda(complex(str(value).replace(' ', '')))
    except ValueError as e:
        raise ConfigError(f'cannot read λ from {value!r}') from e


@on_command('solve', help='nonlocal resolvent R(λ)f')
def solve(session: Session):
    scenario = session.scenario
    problem = session.problem
    lam = parse_lambda(session.get('lambda', 'solver', 1.0))
    method = session.get('method', 'solver', 'direct')
    f = problem.interior_vector(session.get('f', 'solver', '1'))

    u = resolvent_with_fallback(
        problem.operator,
        ResolventRequest(lam, f, method, scenario.tol, scenario.max_iter)
    )

    coords = problem.grid.active_coords
    header = coordinate_header(problem.grid.dimension)
    if np.iscomplexobj(u):
        session.data.save_table(header + ['u_re', 'u_im'], np.column_stack([coords, u.real, u.imag]))
    else:
        session.data.save_table(header + ['u'], np.column_stack([coords, u]))
    session.data.results.update(
        {'lambda': lam, 'method': method, 'max_abs_u': float(np.abs(u).max())}
    )


@solve.args_parser
def _(parser):
    parser.add_argument('--lambda', dest='lambda', help='λ, e.g. 1 or 1+10j')
    parser.add_argument('--method', choices=METHODS)
    parser.add_argument('--f', help='right-hand side expression in x, y')
