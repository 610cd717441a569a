"""Criterion reporting for the renderer's own acceptance check."""

import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a numbered acceptance verdict, then return ``passed``."""

    def record(number: int, passed, detail: str) -> bool:
        CRITERIA[number] = (bool(passed), str(detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria (renderer)")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} {verdict}: {detail}")
