import pytest

_criteria: dict[str, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            cid, title = mark.args
            _criteria.setdefault(cid, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if not mark:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = getattr(item, "acceptance_detail", "")
        _criteria[mark.args[0]]["outcomes"].append((report.passed, item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c[1:])):
        entry = _criteria[cid]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(ok for ok, _, _ in outcomes) else "FAIL"
        details = "; ".join(d for _, _, d in outcomes if d)
        line = f"{cid} {status}: {entry['title']}"
        terminalreporter.write_line(line + (f" [{details}]" if details else ""))


@pytest.fixture
def record(request):
    """Attach a short measurement string to the acceptance summary line."""
    def _record(text):
        request.node.acceptance_detail = text
    return _record
