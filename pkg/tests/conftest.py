from fractions import Fraction as F

import pytest

from cml.map_core import validate_params


@pytest.fixture(scope="session")
def params():
    """eta = 1/5, delta = 1/50, gamma = 1/200."""
    return validate_params(F(1, 5), F(1, 50), F(1, 200))


@pytest.fixture(scope="session")
def params_g3():
    return validate_params(F(1, 5), F(1, 50), F(1, 1000))


# one summary line per acceptance criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _CRITERIA.get(n, (title, True))
        _CRITERIA[n] = (title, prev[1] and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
