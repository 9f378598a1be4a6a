import pytest

CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict for the acceptance summary."""

    def record(number, passed, detail=""):
        CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
