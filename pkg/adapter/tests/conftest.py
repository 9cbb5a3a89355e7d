"""Shared pytest wiring: surface acceptance verdicts in the summary."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        import test_adapter_acceptance
    except ImportError:
        return
    lines = getattr(test_adapter_acceptance, "VERDICT_LINES", [])
    if not lines:
        return
    terminalreporter.section("adapter acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
