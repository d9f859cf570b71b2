import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trajkld.simulation import Scenario, training_data

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_trial():
    """One replication of a 5-degree, p=2 scenario with its truth bundle."""
    return training_data(Scenario(5.0, 2, "none", seed=101), 0)


@pytest.fixture(scope="session")
def mcar_trial():
    return training_data(Scenario(5.0, 3, "mcar", seed=102), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per criterion; printed again in the terminal summary."""
    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
