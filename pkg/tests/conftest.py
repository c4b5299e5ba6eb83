import pytest

_REPORT = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion")


@pytest.fixture
def acceptance_report():
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _REPORT:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")
