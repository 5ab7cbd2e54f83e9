import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, status: str, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{status:<4} criterion {criterion:>2}: {detail}")


@pytest.fixture
def acceptance_report():
    return report


def data_dir() -> Path:
    return Path(os.environ.get("COLLABDP_DATA", "data"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
