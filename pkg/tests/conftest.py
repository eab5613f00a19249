import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call":
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], outcome))
    elif report.when == "setup" and report.skipped:
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], "SKIP"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome:4s}  {name}")


@pytest.fixture
def make_premise():
    from followupqa.corpus import Premise

    def build(title: str, *sentences: str) -> Premise:
        return Premise(title=title, sentences=tuple(sentences) or (title,))

    return build
