import pytest

_LINES = []


@pytest.fixture
def record():
    """Append one acceptance line; shown in the terminal summary."""

    def _record(number, name, passed, detail, seconds):
        line = f"ACCEPTANCE {number:<3} {'PASS' if passed else 'FAIL'}  {name}: {detail} [{seconds:.1f}s]"
        _LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
