"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import re

_outcomes: dict = {}
_labels: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = re.match(r"test_criterion_(\d+)_(\w+)", item.name)
        if m and item.fspath.basename == "test_acceptance.py":
            doc = (item.function.__doc__ or m.group(2).replace("_", " ")).strip().splitlines()[0]
            _labels[item.nodeid] = (int(m.group(1)), doc)


def pytest_runtest_logreport(report):
    if report.nodeid not in _labels:
        return
    if report.failed:
        _outcomes[report.nodeid] = "FAIL"
    elif report.when == "call" and report.nodeid not in _outcomes:
        _outcomes[report.nodeid] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (num, doc) in sorted(_labels.items(), key=lambda kv: kv[1][0]):
        status = _outcomes.get(nodeid, "NOT RUN")
        terminalreporter.write_line(f"criterion {num:2d}  {status:4s}  {doc}")
