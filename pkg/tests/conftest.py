import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "parareg", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("parareg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, filled by test_acceptance and echoed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        suite, passed, lines = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion} ({suite}): {'PASS' if passed else 'FAIL'}")
        for line in lines:
            terminalreporter.write_line(f"    {line}")
