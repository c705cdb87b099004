import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _criteria.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})
            item.user_properties.append(("criterion", number))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    number = props.get("criterion")
    if number is None or (report.when != "call" and report.passed):
        return
    entry = _criteria[number]
    if report.when == "call":
        entry["ran"] = True
        if "detail" in props:
            entry["details"].append(str(props["detail"]))
    if report.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] and entry["ran"] else ("FAIL" if entry["ran"] or not entry["passed"] else "NOT RUN")
        detail = f"  ({'; '.join(entry['details'])})" if entry["details"] else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}: {entry['title']}{detail}")
