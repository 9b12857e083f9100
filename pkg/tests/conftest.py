"""Shared test plumbing.

The acceptance tests register one PASS/FAIL line each; the terminal
summary echoes them so a plain ``pytest -v`` run shows the headline
results in one block.
"""

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log() -> list[str]:
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance results")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
