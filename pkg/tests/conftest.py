from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import pytest

from nerfpc.fixtures import FixtureSpec, build_fixture

DATA = Path(__file__).parent / "data"

_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@lru_cache(maxsize=None)
def cached_fixture(kind: str, with_images: bool = True, seed: int = 0):
    return build_fixture(FixtureSpec(kind, {}, seed), with_images=with_images)


@pytest.fixture(scope="session")
def fixture_of():
    return cached_fixture


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _CRITERIA[number] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  ({duration:.1f} s)")
