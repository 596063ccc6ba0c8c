import numpy as np
import pytest

from pstrata.dataset import Dataset


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="run the hours-long 50-replicate coverage study")


def pytest_configure(config):
    config.addinivalue_line("markers", "full: needs --full")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="needs --full")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


def make_dataset(rng, n=12, K=3):
    """Small valid dataset with every observed profile represented."""
    z = rng.integers(0, 2, n)
    z[:4] = [1, 1, 1, 0]
    c = rng.uniform(10, 33, n)
    y = rng.uniform(0.5, 20, n)
    event = (y < c).astype(int)
    y_t = np.minimum(y, c)
    disc = np.zeros(n, dtype=int)
    d_t = c.copy()
    # unit 0: treated, observed discontinuation then event
    disc[0], event[0] = 1, 1
    y_t[0] = min(y_t[0], c[0] * 0.9)
    d_t[0] = y_t[0] * 0.5
    # unit 1: treated ND (event, no discontinuation); unit 2: censored on both
    event[1] = 1
    y_t[1] = min(y_t[1], c[1] * 0.9)
    event[2], y_t[2] = 0, c[2]
    X = np.column_stack([rng.normal(size=n), rng.integers(0, 2, n), rng.integers(0, 2, n)])[:, :K].astype(float)
    names = ("x1", "x2", "x3")[:K]
    return Dataset(z=z, c=c, y_tilde=y_t, event=event, d_tilde=d_t, disc=disc, X=X,
                   covariate_names=names, continuous=(True, False, False)[:K])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return make_dataset(rng)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
