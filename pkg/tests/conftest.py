import re

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_outcomes = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or report.outcome != "passed":
        if report.when == "setup" and report.outcome == "passed":
            return
        prev = _outcomes.get(key)
        if prev is None or prev[0] == "PASS":
            _outcomes[key] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (n, name), (status, detail) in sorted(_outcomes.items()):
        line = f"criterion {n:2d} {name:<28s} {status}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)
