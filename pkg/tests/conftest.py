from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

import pytest

from certflow.store import Project

_ACCEPTANCE: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.setdefault(label, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE):
        outcomes = _ACCEPTANCE[label]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {label}  ({len(outcomes)} test{'s' * (len(outcomes) != 1)})")


def example_source(name: str = "amds") -> Path:
    return Path(str(resources.files("certflow") / "data" / name))


@pytest.fixture
def project(tmp_path) -> Project:
    return Project.init(tmp_path / "proj", name="proj")


@pytest.fixture
def amds(tmp_path) -> Project:
    root = tmp_path / "amds"
    shutil.copytree(example_source(), root)
    return Project(root)
