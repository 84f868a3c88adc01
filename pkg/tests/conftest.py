from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from floatarm.dynamics import default_arm
from floatarm.harness import run_scenario
from floatarm.kinematics import default_chain
from floatarm.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture(scope="session")
def arm():
    return default_arm()


class RunCache:
    """Closed-loop runs shared by every test of the session.

    The standard runs take tens of seconds each; tests ask for them by
    scenario file, controller and overrides and get the same RunMetrics.
    """

    def __init__(self, root: Path):
        self.root = root
        self._runs = {}

    def get(self, scenario: str, controller: str, **overrides):
        key = (scenario, controller, tuple(sorted(overrides.items())))
        if key not in self._runs:
            scn = load_scenario(SCENARIOS / scenario, overrides or None)
            tag = "-".join([Path(scenario).stem, controller.replace("+", "-")]
                           + [f"{k}={v}" for k, v in sorted(overrides.items())])
            self._runs[key] = run_scenario(scn, self.root / tag, controller=controller)
        return self._runs[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return RunCache(tmp_path_factory.mktemp("runs"))


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in sorted(acc.RESULTS.items()):
        terminalreporter.line(f"criterion {name}: {'PASS' if ok else 'FAIL'} {detail}")
