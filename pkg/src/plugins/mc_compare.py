""" 蒙特卡罗对比插件

输出 `<name>.mc-compare.csv`：item,x0_x[,x0_y],t,f,mean,stderr,alive_fraction,pde,z；
配置了 mc.histogram 时另外输出 `<name>.mc-compare.histogram.csv`
"""
import numpy as np

from nbd import Session, on_command
from nbd.exceptions import ConfigError, InvariantFailure
from nbd.mc import mc_vs_pde, occupation_histogram
from nbd.rundata import coordinate_header
from nbd.spectral import invariant_density, total_variation

Z_LIMIT = 4.0


def read_battery(session: Session):
    items = session.get('battery', 'mc', None)
    if not items:
        raise ConfigError('mc.battery is empty')
    battery = []
    for item in items:
        x0 = np.atleast_1d(np.asarray(item['x0'], dtype=float))
        battery.append((x0, float(item['t']), session.scenario.expression(item.get('f', '1'))))
    return battery


@on_command('mc-compare', help='Monte Carlo versus PDE z-scores')
def mc_compare(session: Session):
    scenario = session.scenario
    if scenario.process is None:
        raise ConfigError('scenario has no mc section')
    problem = session.problem
    op = problem.operator
    dimension = problem.grid.dimension

    report = mc_vs_pde(op, scenario.process, read_battery(session))
    rows = []
    for k, item in enumerate(report.items):
        e = item.estimate
        rows.append(
            [k] + list(item.x0) +
            [item.t, item.f, e.mean, e.stderr, e.alive_fraction, item.pde, float(item.z)]
        )
    header = (
        ['item'] + coordinate_header(dimension, 'x0') +
        ['t', 'f', 'mean', 'stderr', 'alive_fraction', 'pde', 'z']
    )
    session.data.save_records(header, rows)
    session.data.results['max_abs_z'] = report.max_abs_z

    histogram = scenario.section('mc').get('histogram')
    if histogram:
        x0 = np.atleast_1d(np.asarray(histogram['x0'], dtype=float))
        occupancy = occupation_histogram(op, scenario.process, x0, float(histogram['t']))
        density = invariant_density(op)
        reference = density.h * problem.grid.cell_volume
        distance = total_variation(occupancy, reference)
        session.data.save_table(
            coordinate_header(dimension) + ['occupancy', 'h_mass'],
            np.column_stack([problem.grid.interior_coords, occupancy, reference]),
            part='histogram'
        )
        session.data.results['total_variation'] = distance

    exceeded = report.exceedances(Z_LIMIT)
    if exceeded:
        first = exceeded[0]
        raise InvariantFailure(
            f'{len(exceeded)} item(s) with |z| > {Z_LIMIT:g}, first at x0={first.x0} '
            f't={first.t} f={first.f}: z={first.z:.3g}'
        )
