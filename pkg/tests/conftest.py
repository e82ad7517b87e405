import numpy as np
import pytest

from msmortar.field import builtin_field, loguniform_field, realize_field
from msmortar.geometry import build_geometry
from msmortar.interface import InterfaceOperator


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_problem():
    """(geom, kappa, op) at N=2, n=2 with a random log-uniform field."""
    geom = build_geometry(2, 2)
    kappa = loguniform_field(geom, 1e3, np.random.default_rng(7)).values
    return geom, kappa, InterfaceOperator(geom, kappa)


@pytest.fixture(scope="session")
def mid_problem():
    """(geom, kappa, op) at N=2, n=4."""
    geom = build_geometry(2, 4)
    kappa = loguniform_field(geom, 1e4, np.random.default_rng(11)).values
    return geom, kappa, InterfaceOperator(geom, kappa)


@pytest.fixture(scope="session")
def shipped_5x10():
    """Interface operators on both built-in fields at N=5, n=10, eta=1e4."""
    geom = build_geometry(5, 10)
    out = {}
    for name in ("inclusions", "channels"):
        kappa = realize_field(builtin_field(name, 1e4), geom).values
        out[name] = (geom, kappa, InterfaceOperator(geom, kappa))
    return out


# ------------------------------------------------------------ acceptance log

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    ok = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
