import pytest

_REPORT = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion for the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _REPORT.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_REPORT):
        terminalreporter.write_line(line)
