"""Collects per-criterion outcomes of the acceptance suite and prints one
PASS/FAIL line for each criterion at the end of the run."""
from collections import defaultdict

import pytest

_outcomes = defaultdict(list)  # criterion -> [(nodeid, passed, details)]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        details = [v for k, v in item.user_properties if k == "detail"]
        _outcomes[marker.args[0]].append((item.name, rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        ok = all(p for _, p, _ in runs)
        failed = [name for name, p, _ in runs if not p]
        note = f" (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}{note}")
        for name, _, details in runs:
            for d in details:
                tr.write_line(f"    {name}: {d}")
