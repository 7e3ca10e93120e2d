import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# (order, line) pairs recorded by the acceptance suite, printed at the end of the run.
ACCEPTANCE_LINES: list[tuple[float, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
