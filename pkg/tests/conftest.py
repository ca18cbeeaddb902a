"""Test-session plumbing.

Tests marked ``@pytest.mark.acceptance("<name>")`` represent one acceptance
criterion each; this plugin prints exactly one ``ACCEPTANCE <name>:
PASSED``/``FAILED`` line per criterion as its test resolves, so the
acceptance verdicts are readable straight off the pytest output.
"""

import pytest

_emitted = set()


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): marks a test as one acceptance criterion; a "
        "single 'ACCEPTANCE <name>: PASSED/FAILED' line is printed for it")


def _emit(item, name, verdict):
    if name in _emitted:
        return
    _emitted.add(name)
    line = f"ACCEPTANCE {name}: {verdict}"
    reporter = item.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.ensure_newline()
        reporter.write_line(line)
    else:
        print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "setup" and report.outcome in ("failed", "skipped"):
        _emit(item, name, "FAILED")
    elif report.when == "call":
        _emit(item, name, "PASSED" if report.outcome == "passed" else "FAILED")
