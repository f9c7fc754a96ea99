import time

import pytest

from pipeline import run_pipeline

SUITE_BUDGET_S = 120.0

_results: dict[int, tuple[str, str]] = {}
_start = time.perf_counter()


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """Default semantic pipeline executed once per session."""
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        previous = _results.get(number, (None, "PASS"))[1]
        status = "FAIL" if failed or previous == "FAIL" else "PASS"
        _results[number] = (title, status)


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _start
    session.config._suite_elapsed = elapsed
    if elapsed > SUITE_BUDGET_S and session.testscollected > 1:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        title, status = _results[number]
        tr.write_line(f"criterion {number}: {status}  {title}")
    elapsed = getattr(config, "_suite_elapsed", time.perf_counter() - _start)
    status = "PASS" if elapsed <= SUITE_BUDGET_S else "FAIL"
    tr.write_line(f"criterion 9: {status}  full suite under {SUITE_BUDGET_S:.0f} s "
                  f"({elapsed:.1f} s this session)")
