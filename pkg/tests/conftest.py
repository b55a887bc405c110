import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from dwcat.device import reference_units  # noqa: E402
from dwcat.spectral import BasisPolicy, PotentialParams, diagonalize  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ZETA_C = -2.5e-4
ZETA_F = 3e-4


@pytest.fixture(scope="session")
def unit():
    return reference_units()


@pytest.fixture(scope="session")
def gamma(unit):
    return unit.gamma


@pytest.fixture(scope="session")
def policy():
    return BasisPolicy()


@pytest.fixture(scope="session")
def eig_f(gamma, policy):
    return diagonalize(PotentialParams(ZETA_F, gamma), policy)


@pytest.fixture(scope="session")
def eig_c(gamma, policy):
    return diagonalize(PotentialParams(ZETA_C, gamma), policy)


# ------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Record and echo one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, passed: bool, detail: str) -> None:
        line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
