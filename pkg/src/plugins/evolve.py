""" 演化插件

输出 `<name>.evolve.csv`：t,node_x[,node_y],u，每个时刻一段，只含内部节点
"""
import numpy as np

from nbd import Session, on_command
from nbd.exceptions import ConfigError
from nbd.rundata import coordinate_header
from nbd.solver import EVOLVE_SCHEMES, EvolveRequest, evolve, evolve_path


def parse_times(value):
    if isinstance(value, str):
        value = [v for v in value.split(',') if v.strip()]
    times = [float(t) for t in np.atleast_1d(value)]
    if not times or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= 0:
        raise ConfigError(f'times must be positive and increasing, got {value!r}')
    return times


@on_command('evolve', help='semigroup evolution u(t) = T(t)u0')
def evolve_(session: Session):
    problem = session.problem
    op = problem.operator
    u0 = problem.interior_vector(session.get('u0', 'evolve', '1'))
    times = parse_times(session.get('times', 'evolve', [0.1, 1.0]))
    scheme = session.get('scheme', 'evolve', 'backward_euler')
    if scheme not in EVOLVE_SCHEMES:
        raise ConfigError(f'unknown scheme {scheme!r}')

    if scheme == 'post_widder':
        n = int(session.get('n', 'evolve', 64))
        snapshots = [evolve(op, EvolveRequest(u0, t, scheme, n=n)) for t in times]
    else:
        dt = float(session.get('dt', 'evolve', 0.01))
        if not dt > 0:
            raise ConfigError('dt must be positive')
        snapshots = evolve_path(op, u0, times, dt)

    coords = problem.grid.interior_coords
    rows = [
        np.column_stack([np.full(op.n, t), coords, u]) for t, u in zip(times, snapshots)
    ]
    header = ['t'] + coordinate_header(problem.grid.dimension) + ['u']
    session.data.save_table(header, np.vstack(rows))
    session.data.results['sup_norm'] = [float(np.abs(u).max()) for u in snapshots]


@evolve_.args_parser
def _(parser):
    parser.add_argument('--times', help='comma separated, e.g. 0.1,1,10')
    parser.add_argument('--scheme', choices=EVOLVE_SCHEMES)
    parser.add_argument('--dt', type=float)
    parser.add_argument('--n', type=int, help='Post–Widder steps')
    parser.add_argument('--u0', help='initial value expression in x, y')
