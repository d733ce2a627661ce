import numpy as np
import pytest

from nsaclab.profile import optimal_profile


@pytest.fixture(scope="session")
def theta0():
    return optimal_profile()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        _CRITERIA[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
