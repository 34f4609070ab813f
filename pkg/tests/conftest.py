import numpy as np
import pytest

from fingersplit import meshes
from fingersplit.kinematics import default_hand
from fingersplit.splitter import SplitterParams, make_proxy, max_span, run_split, seed_antipodal

ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def hand():
    return default_hand()


@pytest.fixture(scope="session")
def span(hand):
    return max_span(hand)


@pytest.fixture(scope="session")
def small_sphere():
    return meshes.sphere(2000)


@pytest.fixture(scope="session")
def fixture_plans(hand, span):
    """Default-parameter plans on every fixture, keyed by fixture name."""
    params = SplitterParams()
    plans = {}
    for name in meshes.FIXTURES:
        surface = meshes.fixture(name)
        g = seed_antipodal(surface, span=span)
        proxy = make_proxy(surface, params.proxy_cell_fraction)
        plans[name] = (surface, run_split(g, surface, hand, params, proxy, span=span))
    return plans


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
