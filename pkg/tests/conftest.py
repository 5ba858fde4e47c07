import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """``report(criterion, ok, detail)`` records one acceptance line and returns ``ok``."""

    def emit(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
