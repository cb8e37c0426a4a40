import pytest

_CRITERIA = []


def record_criterion(number, title, ok, detail=""):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    _CRITERIA.append((number, line))
    print(line)
    return ok


@pytest.fixture
def criterion(capsys):
    """Record and echo one pass/fail line for an acceptance criterion."""

    def report(number, title, ok, detail=""):
        with capsys.disabled():
            print()
            record_criterion(number, title, ok, detail)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda t: t[0]):
            terminalreporter.write_line(line)
