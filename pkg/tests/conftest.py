import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``record(name, ok, detail)`` returns ``ok``."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
