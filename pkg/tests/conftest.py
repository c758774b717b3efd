import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+?)(\[.*\])?$")
_results: dict = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    ok = _results.get(key, True)
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _results[key] = ok


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for (n, name), ok in sorted(_results.items()):
        terminalreporter.write_line(f"criterion {n} {name.replace('_', ' ')}: {'PASS' if ok else 'FAIL'}")
