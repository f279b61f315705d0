import pytest

# criterion number -> one-line verdict, printed in the terminal summary
VERDICTS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def verdict(request):
    """Record a criterion outcome, print it, then assert it."""
    number, title = request.node.get_closest_marker("criterion").args

    def record(ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
        VERDICTS[number] = line
        print(line)
        assert ok, line

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    if report.failed and number not in VERDICTS:
        VERDICTS[number] = f"criterion {number:2d} FAIL  {title}  [error: {call.excinfo.typename}]"


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
