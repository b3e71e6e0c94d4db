from __future__ import annotations


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
