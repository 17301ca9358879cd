"""Shared pytest hooks: print the acceptance report after the run.

`tests/test_acceptance.py` records one line per criterion via
`acceptance_report`; this hook echoes them after capture is done so the
report is always visible in the terminal output (including `pytest -v`).
"""

acceptance_report: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_report:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report:
            terminalreporter.write_line(line)
