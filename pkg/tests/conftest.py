import warnings

import numba

warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (s.split()[2].rstrip(":").zfill(4), s)):
            terminalreporter.write_line(line)
