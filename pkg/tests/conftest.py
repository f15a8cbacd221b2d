"""Shared fixtures plus the acceptance-summary hook.

Acceptance tests append their CheckResult to the session log; after the
run, pytest prints one PASS/FAIL line per criterion so the verification
status is readable at a glance.
"""

import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for res in ACCEPTANCE_RESULTS:
        status = "PASS" if res.passed else "FAIL"
        terminalreporter.write_line(f"{status} {res.name}: {res.details} [{res.seconds:.1f}s]")
