"""Collects acceptance verdicts and prints one line per criterion."""

import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    def record(number: int, name: str, passed: bool, detail: str):
        ACCEPTANCE[number] = (name, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {name}: {detail}")
