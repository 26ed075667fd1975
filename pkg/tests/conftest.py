"""Shared test plumbing.

Tests marked ``@pytest.mark.acceptance(num, "label")`` get one summary line
printed per criterion at the end of the session, so a plain ``pytest`` run
shows the acceptance scoreboard without digging through the report.
"""

from __future__ import annotations

import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, label = marker.args
    if report.when == "call":
        _RESULTS[num] = (label, "PASS" if report.passed else "FAIL")
    elif report.when == "setup" and report.outcome != "passed":
        _RESULTS[num] = (label, "SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        label, verdict = _RESULTS[num]
        terminalreporter.write_line(f"ACCEPTANCE {num:2d} {label:<58s} {verdict}")
