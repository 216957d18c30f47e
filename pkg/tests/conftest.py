import os

import pytest
from hypothesis import HealthCheck, settings

from mab_abandon.model import BanditInstance, LogCurve

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criteria report: number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def simple():
    return BanditInstance.binary([0.9, 0.8], 1.0, 0.0, 0.0, 0.0)


@pytest.fixture
def soft():
    return BanditInstance.binary([0.9, 0.8], 0.8, 0.2, 0.2, 0.1)


@pytest.fixture
def opposite():
    # reward-0 abandonment ignores the state, reward-1 abandonment does not
    return BanditInstance.binary([0.9, 0.8], 0.5, 0.5, 0.5, 0.0)


@pytest.fixture
def general():
    return BanditInstance.general([0.9, 0.8], LogCurve(1000.0), 0.5)
