import copy
from pathlib import Path

import pytest

from voipspoof.scenario import load_scenario

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def base_scenario():
    """A fresh copy of the acceptance scenario for tests to tweak."""
    return copy.deepcopy(load_scenario(SCENARIOS / "acceptance.yaml"))


VERDICTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
    print(line)
    VERDICTS.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
