""" 谱插件

输出 `<name>.spectrum.csv`（index,re,im），有不变密度时输出
`<name>.spectrum.density.csv`（node_x[,node_y],h），单步算子的奇异值
`<name>.spectrum.singular.csv`（index,sigma），以及 `<name>.spectrum.msgpack`
"""
import numpy as np

from nbd import Session, on_command
from nbd.rundata import coordinate_header
from nbd.spectral import eigen_spectrum, singular_value_decay, spectral_projection


@on_command('spectrum', help='eigenvalues, spectral projection P and density h')
def spectrum(session: Session):
    problem = session.problem
    op = problem.operator
    tol_zero = session.get('tol_zero', 'spectral', None)
    result = spectral_projection(
        op, eigen_spectrum(op, None if tol_zero is None else float(tol_zero))
    )

    w = result.eigenvalues
    session.data.save_table(['index', 're', 'im'], np.column_stack([np.arange(len(w)), w.real, w.imag]))
    if result.h is not None:
        header = coordinate_header(problem.grid.dimension) + ['h']
        session.data.save_table(
            header, np.column_stack([problem.grid.interior_coords, result.h]), part='density'
        )

    # 单步算子 (I - dt A)^{-1} 的奇异值衰减，dt 缺省为 h_min^2
    sv_dt = float(session.get('sv_dt', 'spectral', min(problem.grid.h)**2))
    sv_count = int(session.get('sv_count', 'spectral', 10))
    sigma = singular_value_decay(op, sv_dt, sv_count)
    session.data.save_table(
        ['index', 'sigma'], np.column_stack([np.arange(len(sigma)), sigma]), part='singular'
    )

    session.data.save_msgpack({
        'eigenvalues': w,
        'spectral_bound': result.spectral_bound,
        'gap': result.gap,
        'zero_modes': result.zero_modes,
        'rank_P': result.rank_P,
        'P': result.P,
        'h': result.h,
        'singular_values': sigma,
        'sv_dt': sv_dt,
    })
    session.data.results.update({
        'spectral_bound': result.spectral_bound,
        'gap': result.gap,
        'zero_modes': result.zero_modes,
        'rank_P': result.rank_P,
        'tol_zero': result.tol_zero,
        'clipped': result.clipped,
        'sv_dt': sv_dt,
        'singular_values': sigma,
    })


@spectrum.args_parser
def _(parser):
    parser.add_argument('--tol-zero', dest='tol_zero', type=float)
    parser.add_argument('--sv-dt', dest='sv_dt', type=float)
    parser.add_argument('--sv-count', dest='sv_count', type=int)
