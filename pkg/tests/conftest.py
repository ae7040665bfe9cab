"""Shared fixtures, plus the summary hook that prints one line per
acceptance criterion at the end of a run (captured output would otherwise
swallow the lines on success)."""

import pytest


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for one acceptance criterion, then assert."""

    def record(num: int, ok: bool, detail: str) -> None:
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config._criterion_lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
