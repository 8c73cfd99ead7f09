"""Shared fixtures plus a terminal summary for the acceptance criteria."""

import numpy as np
import pytest

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS[report.nodeid] = report.outcome
    elif report.when == "setup" and report.outcome == "skipped" and (
        "test_acceptance" in report.nodeid
    ):
        _ACCEPTANCE_RESULTS[report.nodeid] = "skipped"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    outcome_text = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE_RESULTS):
        name = nodeid.split("::")[-1]
        text = outcome_text.get(_ACCEPTANCE_RESULTS[nodeid], "FAIL")
        terminalreporter.write_line(f"{name}: {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
