import pytest

_LINES = {}


class _Report:
    def __init__(self, number):
        self.number = number

    def __call__(self, passed: bool, detail: str) -> bool:
        line = f"CRITERION {self.number} {'PASS' if passed else 'FAIL'}: {detail}"
        _LINES[self.number] = line
        print(line)
        return passed


@pytest.fixture
def criterion(request):
    """``criterion(k)`` returns a recorder that prints one PASS/FAIL line for criterion k."""
    return _Report


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
