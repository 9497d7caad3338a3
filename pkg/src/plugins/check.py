""" 不变量检查插件

输出 `<name>.check.csv`：name,status,detail。有检查失败时退出码为 2
"""
from nbd import Session, on_command
from nbd.exceptions import ConfigError, InvariantFailure
from nbd.invariants import FAIL, INVARIANTS, PASS, SKIP, CheckContext, run_checks


@on_command('check', help='run the invariant suite')
def check(session: Session):
    only = session.get('only', None, '')
    names = [name.strip() for name in only.split(',') if name.strip()] or None
    unknown = [name for name in names or [] if name not in INVARIANTS]
    if unknown:
        raise ConfigError(f'unknown check(s): {", ".join(unknown)}')

    process = session.scenario.process
    ctx = CheckContext(
        session.problem,
        seed=process.seed if process else 0,
        mc_paths=session.get('mc_paths', None, None),
    )
    outcomes = run_checks(ctx, names)

    session.data.save_records(
        ['name', 'status', 'detail'], [[o.name, o.status, o.detail] for o in outcomes]
    )
    counts = {s: sum(o.status == s for o in outcomes) for s in (PASS, FAIL, SKIP)}
    session.data.results.update(counts)

    failed = [o for o in outcomes if o.status == FAIL]
    if failed:
        raise InvariantFailure(f'{failed[0].name}: {failed[0].detail}')


@check.args_parser
def _(parser):
    parser.add_argument('--only', help='comma separated check names')
    parser.add_argument('--mc-paths', dest='mc_paths', type=int)
