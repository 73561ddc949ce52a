import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--runlong", action="store_true", default=False, help="run full-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runlong"):
        return
    skip = pytest.mark.skip(reason="full-scale run; use --runlong")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_system(rng, m=25, l=5, p=4, n=10):
    A = rng.standard_normal((m, l, n))
    Xstar = rng.standard_normal((l, p, n))
    return A, Xstar
