"""Collects acceptance outcomes and prints one line per criterion at the end."""
import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:160]
        _outcomes[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status, detail = _outcomes[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
