import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture()
def measured(request):
    """List of short strings shown next to the criterion in the summary."""
    notes = []
    request.node.user_properties.append(("measured", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        notes = dict(item.user_properties).get("measured", [])
        _results[marker.args[0]] = (status, marker.args[1], "; ".join(notes))
        print(f"\ncriterion {marker.args[0]:>2} {status}: {marker.args[1]}")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title, notes = _results[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{notes}]" if notes else ""))
