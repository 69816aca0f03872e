import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Collects the one-line verdict of an acceptance criterion."""
    def report(number, title, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
