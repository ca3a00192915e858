from pathlib import Path

import pytest

from deadlock_po import read_trace

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load(name):
    return read_trace(FIXTURES / f"{name}.trace")


@pytest.fixture
def fixture_trace():
    return load


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
