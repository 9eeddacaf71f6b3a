import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_OUTCOMES = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    cid, title = props["criterion"]
    if report.when == "call" or report.outcome != "passed":
        ok = _OUTCOMES.get(cid, (True, title))[0] and report.outcome == "passed"
        _OUTCOMES[cid] = (ok, title)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_OUTCOMES):
        ok, title = _OUTCOMES[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {title}")
