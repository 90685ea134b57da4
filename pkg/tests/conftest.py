import json
from pathlib import Path

import numpy as np
import pytest

from bvlnav.oracle import load_mdp

DATA = Path(__file__).with_name("data")

# filled by the acceptance tests, echoed at the end of the session
CRITERIA_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def risky_mdp():
    return load_mdp(DATA / "risky_shortcut.json")


@pytest.fixture(scope="session")
def corridor_mdp():
    return load_mdp(DATA / "slippery_corridor.json")


@pytest.fixture(scope="session")
def infotrap_env():
    from bvlnav.world import RnpSpec, generate_rnp
    return generate_rnp(RnpSpec("InfoTrap", 10, 3))


@pytest.fixture(scope="session")
def small_graph(infotrap_env):
    """A cheap valued roadmap on InfoTrap(10,3) shared by the unit tests."""
    from bvlnav.firm import FirmConfig, build_firm
    from bvlnav.simulation import Models
    return build_firm(infotrap_env, FirmConfig(n_nodes=60, n_mc=10), Models(), seed=3)


def load_json(name):
    return json.loads((DATA / name).read_text())
