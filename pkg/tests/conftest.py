"""Shared pytest wiring.

The acceptance tests record one verdict line each; printing them from a
terminal-summary hook keeps them visible in the normal captured run, not
just under -s.
"""

VERDICTS: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)
