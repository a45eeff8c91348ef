import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = rep.failed
    if rep.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        prev = item.config._criteria.get(number)
        if prev is not None and not prev[1]:
            return
        if failed:
            detail = str(rep.longrepr).splitlines()[-1]
        elif prev is not None and prev[2]:
            detail = f"{prev[2]}; {detail}" if detail else prev[2]
        item.config._criteria[number] = (title, not failed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = config._criteria
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(crit):
        title, ok, detail = crit[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
