import pytest

_CRITERION_LINES = {}


@pytest.fixture
def criterion_report():
    """Recorder for the acceptance checklist printed after the run."""

    def record(num: int, ok: bool, detail: str) -> None:
        state = "PASS" if ok else "FAIL"
        _CRITERION_LINES[num] = f"{state} criterion {num}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_CRITERION_LINES):
            terminalreporter.write_line(_CRITERION_LINES[num])
