import pytest

N_CRITERIA = 10
_results = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records a pass/fail line and asserts."""
    def record(n, ok, detail=""):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _results[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(_results.get(n, f"criterion {n:2d}: NOT RUN"))
