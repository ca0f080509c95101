"""Shared pytest setup: the acceptance report printed at the end of a run."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
