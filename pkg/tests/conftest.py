import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``criterion(n, passed, detail)``; the lines are printed after the run."""

    def record(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'} ({detail})"
        _CRITERIA[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
