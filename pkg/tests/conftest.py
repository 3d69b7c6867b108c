"""Shared pytest hooks: surface acceptance verdicts in the final report."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_verdict():
    """One pass/fail line per guarantee in the terminal summary, then assert."""

    def emit(name: str, ok: bool, detail: str) -> None:
        line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)
