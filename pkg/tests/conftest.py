import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedrouter.datagen import ScenarioConfig, build_scenario


@pytest.fixture(scope="session")
def small_scenarios():
    """Cheap federations reused across tests (4 clients, 4 tasks, small splits)."""
    def make(scenario, **kw):
        params = dict(scenario=scenario, n_clients=4, n_tasks=2, train_per_client=120, test_per_client=60, dim=16, master_seed=3)
        params.update(kw)
        return build_scenario(ScenarioConfig(**params))
    return make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
