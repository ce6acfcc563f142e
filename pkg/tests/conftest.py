import importlib

import pytest

from steeraudit import _fallback


def _compiled():
    try:
        return importlib.import_module("steeraudit._kernels")
    except ImportError:
        return None


COMPILED = _compiled()
BACKENDS = [pytest.param(_fallback, id="python")]
if COMPILED is not None:
    BACKENDS.append(pytest.param(COMPILED, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


# lines recorded by test_acceptance.py, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
