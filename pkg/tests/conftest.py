import numpy as np
import pytest

from stentshape.graft_model import assemble_graft, default_device
from stentshape.markers import place_markers
from stentshape.projection import camera_for_view


@pytest.fixture(scope="session")
def spec():
    return default_device()


@pytest.fixture(scope="session")
def reference(spec):
    return assemble_graft(spec)


@pytest.fixture(scope="session")
def markers(spec):
    return place_markers(spec)


@pytest.fixture(scope="session")
def camera(spec):
    return camera_for_view(0.0, center=(0.0, 0.0, spec.total_height / 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
