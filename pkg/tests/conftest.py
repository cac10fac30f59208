import pytest

from ffarray.model import PhysicalParams, build_geometry
from ffarray.pulses import Calibrator

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return PhysicalParams()


@pytest.fixture(scope="session")
def calibrator(params):
    return Calibrator(params)


@pytest.fixture(scope="session")
def cals(calibrator):
    return {g: calibrator.calibrate(g) for g in ("Rz", "Rx", "SqrtISwap")}


@pytest.fixture(scope="session")
def geometries():
    return {k: build_geometry(k) for k in ("LA", "SA", "STA")}


@pytest.fixture
def report_criterion():
    """Record a one-line verdict that is echoed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
