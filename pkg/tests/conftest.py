import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from posealign.geometry import load_mean_face

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mean_face():
    return load_mean_face()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion after the run."""
    import sys

    for name, module in sys.modules.items():
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            results = getattr(module, "RESULTS", None)
            if results:
                terminalreporter.section("acceptance criteria")
                for line in results:
                    terminalreporter.write_line(line)
