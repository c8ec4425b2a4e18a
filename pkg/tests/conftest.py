"""Per-criterion bookkeeping for ``test_acceptance.py``.

Acceptance tests carry ``@pytest.mark.criterion("name")``. Outcomes and
wall-clock durations are pooled per criterion, and one PASS/FAIL line per
criterion is printed at the end of the session.
"""

from collections import defaultdict

import pytest

CRITERIA: dict[str, dict] = defaultdict(lambda: {"passed": 0, "failed": 0, "skipped": 0, "seconds": 0.0})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test belongs to")


def _criterion(item):
    marker = item.get_closest_marker("criterion")
    return marker.args[0] if marker else None


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = _criterion(item)
    if name is None:
        return
    entry = CRITERIA[name]
    entry["seconds"] += call.duration
    if report.when == "call" or report.outcome != "passed":
        if report.skipped:
            entry["skipped"] += 1
        elif report.failed:
            entry["failed"] += 1
        elif report.when == "call":
            entry["passed"] += 1


def criterion_seconds(name: str) -> float:
    return CRITERIA[name]["seconds"] if name in CRITERIA else 0.0


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, entry in CRITERIA.items():
        if entry["failed"]:
            status = "FAIL"
        elif entry["passed"]:
            status = "PASS"
        else:
            status = "SKIP"
        counts = f"{entry['passed']} passed, {entry['failed']} failed, {entry['skipped']} skipped"
        terminalreporter.write_line(f"{status}  {name}  ({counts}, {entry['seconds']:.1f}s)")
