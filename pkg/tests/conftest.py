import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def record():
    """Log one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def _record(number: int, ok: bool, text: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}"
        print(_ACCEPTANCE[number])
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
