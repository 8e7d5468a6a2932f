import pytest
from hypothesis import HealthCheck, settings

from ctganru.tabular import make_schema
from helpers import make_toy

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def toy_schema():
    return make_schema(["x"], {"a": ["p", "q"], "y": ["0", "1"]}, label="y")


@pytest.fixture
def toy_data():
    return make_toy(400, seed=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
