"""Shared test plumbing.

The acceptance tests record a verdict for each numbered criterion through
the ``criterion`` fixture; the terminal summary prints one PASS/FAIL line
per criterion so the outcome survives in piped logs even when pytest's own
output is truncated or a test errors out after recording.
"""

import pytest

# number -> (passed, detail); populated by the acceptance tests
CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a numbered acceptance verdict, then return ``passed``.

    Usage: ``assert criterion(3, ok, "50 tuples, zero violations, 1.2s")``.
    Recording happens before the assert so a FAIL line is emitted even
    when the assertion stops the test.
    """

    def record(number: int, passed, detail: str) -> bool:
        CRITERIA[number] = (bool(passed), str(detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} {verdict}: {detail}")
