import logging
import os
import tempfile

# 必须在导入 nbd 之前设置，配置文件和日志都写到临时目录
os.environ['NBD_HOME'] = tempfile.mkdtemp(prefix='nbd-test-')

import pytest
from hypothesis import settings

from nbd import config
from nbd.scenario import Problem, Scenario, load_scenario

settings.register_profile('fast', max_examples=30, deadline=None)
settings.register_profile('thorough', max_examples=300, deadline=None)
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'fast'))


def rod(n=4, measure=None, **coefficients):
    """ (0, 1) 上的问题，缺省 a = 1、零测度
    """
    data = {
        'domain': {'dimension': 1, 'pieces': [[0, 1]], 'n': n},
        'coefficients': coefficients,
        'measure': measure or {'kind': 'zero'},
    }
    return Problem(Scenario.from_dict(data, name='rod'))


def delta_rod(n=4, weight=1.0, **coefficients):
    measure = {'regions': [{'select': 'all', 'atoms': [{'at': 0.5, 'weight': weight}]}]}
    return rod(n, measure, **coefficients)


def bundled(name, *overrides) -> Problem:
    return Problem(load_scenario(config.SCENARIOS_DIR_PATH / f'{name}.json', overrides))


@pytest.fixture(autouse=True)
def _detach_log_handlers():
    yield
    logger = logging.getLogger('nbd')
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


@pytest.fixture
def conservative_rod():
    return delta_rod(n=16)


@pytest.fixture
def subprob_rod():
    return delta_rod(n=16, weight=0.9)


@pytest.fixture
def dirichlet_rod():
    return rod(n=16)
