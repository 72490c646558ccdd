import numpy as np
import pytest
from hypothesis import settings

from carleman_rte.partition import SpatialBox, make_partition
from carleman_rte.transport import SpatialGrid, VelocityQuadrature

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def quadrant():
    return make_partition(2, 1.0, 2.0, [4])


@pytest.fixture(scope="session")
def unit_square():
    return SpatialBox.unit(2)


@pytest.fixture(scope="session")
def quad8(quadrant):
    return VelocityQuadrature.from_partition(quadrant, 1, 2)


@pytest.fixture
def grid16():
    return SpatialGrid.uniform(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line, echo it, and fail the test when ``ok`` is false."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(n, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} :: {detail}"
        lines.append((n, line))
        print("\n" + line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
