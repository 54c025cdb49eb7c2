import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # Replay the acceptance verdicts after capture has ended so they are
    # visible in piped output too, not only on a live terminal.
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
