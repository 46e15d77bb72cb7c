import numpy as np
import pytest

from cgf.config import TINY_VOCAB_DIR, MERGES_FILE, VOCAB_FILE
from cgf.core import MultivariateSeries
from cgf.tokenizer import load_vocab


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow acceptance-scale tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: Monte-Carlo and acceptance-scale runs')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def tiny_vocab():
    return load_vocab('{}/{}'.format(TINY_VOCAB_DIR, VOCAB_FILE), '{}/{}'.format(TINY_VOCAB_DIR, MERGES_FILE))


@pytest.fixture
def ar1_series():
    """y0(t) = 0.8 y0(t-1) + noise, with an unrelated noise column y1"""
    rng = np.random.default_rng(7)
    x = np.zeros((600, 2))
    noise = rng.normal(size=(600, 2))
    x[0] = noise[0]
    for t in range(1, 600):
        x[t, 0] = 0.8 * x[t - 1, 0] + noise[t, 0]
        x[t, 1] = noise[t, 1]
    return MultivariateSeries(x, ('y0', 'y1'))
