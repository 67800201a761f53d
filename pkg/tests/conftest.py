"""Collects outcomes of tests tagged ``@pytest.mark.criterion`` and lists them at the end."""

import pytest

_RESULTS: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if rep.passed:
            status, note = "PASS", ""
        elif rep.skipped:
            status, note = "SKIP", str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else ""
        else:
            status, note = "FAIL", rep.longreprtext.strip().splitlines()[-1] if rep.longreprtext else ""
        _RESULTS.append((status, mark.args[0], note))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, note in _RESULTS:
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({note})" if note else ""))
