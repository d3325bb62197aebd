import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary -----------------------------------------------------------
# Tests marked ``criterion(n, title)`` roll up into one PASS / FAIL / SKIP line per
# criterion; a criterion passes only if every test attached to it passes.
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})
            item.user_properties.append(("criterion", number))


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    entry = _CRITERIA[number]
    if report.failed or report.skipped or report.when == "call":
        entry["outcomes"].append("FAIL" if report.failed else "SKIP" if report.skipped else "PASS")
    if report.when == "call":
        entry["details"].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif "FAIL" in outcomes:
            status = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"[{status}] {number:2d}. {entry['title']}" + (f": {detail}" if detail else ""))
