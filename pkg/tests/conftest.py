import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    criterion = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    # an expected failure is still a failed criterion
    passed = report.passed and not hasattr(report, "wasxfail")
    _RESULTS.setdefault(criterion, []).append((item.name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_RESULTS):
        parts = _RESULTS[criterion]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {criterion}: {status}")
        for name, ok, detail in parts:
            terminalreporter.write_line(f"    {'pass' if ok else 'FAIL'}  {name}  {detail}")
