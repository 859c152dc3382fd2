"""Shared pytest wiring for the test suite."""

import sys
from pathlib import Path

import pytest

# Make sibling helper modules (oracles.py) importable regardless of how
# pytest was invoked.
_TESTS_DIR = str(Path(__file__).resolve().parent)
if _TESTS_DIR not in sys.path:
    sys.path.insert(0, _TESTS_DIR)

# One line per acceptance criterion, echoed at the end of the run so the
# verdicts are visible even when per-test output is captured.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_report():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def record(name, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"{name}: {status} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
