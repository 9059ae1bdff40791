import re

import pytest

_CRITERIA = {}
_NOTES = []


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.failed or (report.when == "call" and key not in _CRITERIA):
        _CRITERIA[key] = "PASS" if report.passed else "FAIL"


@pytest.fixture
def note():
    """Append a line to the acceptance summary printed at the end of the run."""
    return _NOTES.append


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (n, name), outcome in sorted(_CRITERIA.items()):
        tr.write_line(f"criterion {n}: {outcome}  {name}")
    for line in _NOTES:
        tr.write_line(line)
