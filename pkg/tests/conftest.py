import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("acceptance_log")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in mod.CRITERIA.items():
        if number in mod.RESULTS:
            passed, detail = mod.RESULTS[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "NOT RUN", "test did not reach its check"
        terminalreporter.write_line(f"criterion {number:2d} {status:7s} {title}: {detail}")
