"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_results: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.failed):
        status = "PASS" if report.passed else "FAIL"
        _results[n] = (status, props.get("detail", ""), report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        status, detail, secs = _results[n]
        terminalreporter.write_line(f"criterion {n}: {status}  ({secs:.1f} s)  {detail}")
