""" 指数收敛插件

输出 `<name>.decay.csv`：t,distance；拟合得到的 M、ε 写入运行清单
"""
import numpy as np

from nbd import Session, on_command
from nbd.exceptions import ConfigError
from nbd.spectral import decay_fit, eigen_spectrum, spectral_projection

from .evolve import parse_times


@on_command('decay', help='fit ||T(t)u0 - Pu0|| <= M exp(-εt)')
def decay(session: Session):
    problem = session.problem
    op = problem.operator
    tol_zero = session.get('tol_zero', 'spectral', None)
    spec = spectral_projection(
        op, eigen_spectrum(op, None if tol_zero is None else float(tol_zero))
    )
    u0 = problem.interior_vector(session.get('u0', 'decay', 'x'))

    times = session.get('times', 'decay', None)
    if times is None:
        # 缺省取到 6 倍特征时间
        rate = spec.gap if spec.rank_P else -spec.spectral_bound
        if not (np.isfinite(rate) and rate > 0):
            raise ConfigError('decay.times is required when the decay rate is not defined')
        times = list(np.linspace(0.5, 6.0, 8) / rate)
    times = parse_times(times)

    fit = decay_fit(op, spec.P, u0, times)
    session.data.save_table(['t', 'distance'], np.column_stack([fit.times, fit.distances]))
    session.data.results.update({
        'M': fit.M,
        'epsilon': fit.epsilon,
        'residual': fit.residual,
        'window': fit.window,
        'dt': fit.dt,
        'truncated': fit.truncated,
        'spectral_bound': spec.spectral_bound,
        'gap': spec.gap,
        'rank_P': spec.rank_P,
    })


@decay.args_parser
def _(parser):
    parser.add_argument('--times', help='comma separated, at least 4')
    parser.add_argument('--u0', help='initial value expression in x, y')
