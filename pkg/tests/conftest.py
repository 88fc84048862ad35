from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# one "criterion N: PASS|FAIL ..." line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
