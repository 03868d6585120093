from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from chokepoint import synth
from chokepoint.road_network import GeoPoint, build_network, offset_point

DATA = Path(__file__).resolve().parent.parent / "data"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def chain3():
    """Three 100 m segments in a straight line: 0-1-2-3."""
    return synth.corridor_network(3, 100.0)


@pytest.fixture(scope="session")
def corridor():
    return synth.corridor_network()


@pytest.fixture(scope="session")
def grid6():
    return synth.grid_network(6, 6, 200.0)


@pytest.fixture(scope="session")
def two_islands():
    """Two disconnected 100 m segments 1 km apart."""
    o = GeoPoint(10.0, 20.0)
    nodes = {0: o, 1: offset_point(o, 100, 0), 2: offset_point(o, 0, 1000), 3: offset_point(o, 100, 1000)}
    return build_network(nodes, [(0, 0, 1), (1, 2, 3)])


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the verdict line for an acceptance criterion; returns the recorder."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
