import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("hstab", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hstab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
