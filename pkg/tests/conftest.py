"""Shared pytest hooks.

The acceptance module records one (number, line) tuple per criterion;
this hook prints them as a dedicated section of the terminal summary so
every run ends with an explicit PASS/FAIL line per criterion.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
