import pytest

_LINES: list[tuple[str, str]] = []


@pytest.fixture
def record_criterion():
    """Print and remember one pass/fail line for an acceptance criterion."""

    def record(number: str, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:<3} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _LINES.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda item: int(item[0].rstrip("ab"))):
        terminalreporter.write_line(line)
