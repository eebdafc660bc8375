import pytest
from hypothesis import HealthCheck, settings

from hybridsc import solve_pf
from hybridsc.cases import load_bundled

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture(scope="session")
def bundled_op(bundled):
    # tighter than the solver default so forward differences are not noise-limited
    return solve_pf(bundled, tol=1e-12)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
