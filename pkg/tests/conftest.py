from pathlib import Path

import pytest

from selfbias.dataset import load_config, load_ratings

DATA = Path(__file__).parent / "data"

_criteria: dict[str, str] = {}


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def fixture54():
    scales, config = load_config(DATA / "config9.json")
    return load_ratings(DATA / "ratings54.csv", scales, config)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        rank = {"SKIP": 0, "PASS": 1, "FAIL": 2}
        if rank[status] >= rank.get(_criteria.get(label), -1):
            _criteria[label] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"{_criteria[label]}  criterion {label}")
