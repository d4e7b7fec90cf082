"""Shared pytest wiring.

The acceptance tests record one PASS/FAIL line each; echoing them in
the terminal summary keeps the verdicts visible even though pytest
captures stdout of passing tests.
"""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
