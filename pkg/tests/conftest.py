from pathlib import Path

import pytest

from hybridsis import Scenario, load_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIO_PATH = ROOT / "scenarios" / "two_updates.json"

# one PASS/FAIL line per acceptance test, echoed after the run so the
# verdicts are visible without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_scenario() -> Scenario:
    """The bundled two-release demo: h=1, releases at steps 30 and 90,
    final step 150, x0=0.05."""
    return load_scenario(SCENARIO_PATH)
