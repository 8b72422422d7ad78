import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion, after the run."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[number])
