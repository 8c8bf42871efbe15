import csv
from pathlib import Path

import pytest

SAMPLE_DIR = Path(__file__).resolve().parents[1] / "src" / "nfdetect" / "data"

_acceptance_lines: list[str] = []


def record_criterion(number: int, name: str, passed: bool | None, detail: str) -> None:
    """``passed=None`` records a criterion that could not be run here."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    _acceptance_lines.append(f"[{status}] criterion {number}: {name} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def sample_csv() -> Path:
    return SAMPLE_DIR / "sample_flows.csv"


@pytest.fixture
def sample_ini() -> Path:
    return SAMPLE_DIR / "sample.ini"


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, header, name="flows.csv"):
        path = tmp_path / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        return path

    return _write
