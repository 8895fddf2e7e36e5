"""Collects acceptance verdicts and prints them at the end of the session."""
import pytest

VERDICTS = []


class Verdicts:
    def record(self, number: int, title: str, passed: bool, detail: str = "") -> bool:
        VERDICTS.append((number, title, passed, detail))
        print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
        return passed


@pytest.fixture
def verdict():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
