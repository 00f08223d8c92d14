"""Collects the acceptance-criterion verdict lines and prints them in the
terminal summary, where pytest's output capture cannot swallow them."""

criterion_lines = []


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
