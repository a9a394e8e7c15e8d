import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay acceptance criterion lines after capture is torn down."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if not lines:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
