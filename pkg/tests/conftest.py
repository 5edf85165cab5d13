import pytest

_LINES = []


@pytest.fixture
def acceptance_line():
    """Record and print a one-line acceptance verdict."""
    def emit(number, ok, detail):
        line = f"acceptance {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
