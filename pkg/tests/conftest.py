import re

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_(A\d+)_(\w+)", report.nodeid)
    if not m or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[m.group(1)] = ("PASS" if report.passed else "FAIL", f"{m.group(2)} {detail}".strip())


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        status, text = _CRITERIA[key]
        terminalreporter.write_line(f"{key:<4} {status}  {text}")
