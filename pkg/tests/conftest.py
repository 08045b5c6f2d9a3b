import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reifenberg.generators import SnowflakeSpec, plane_lattice_balls, snowflake_balls
from reifenberg.measure import DiscreteMeasure, measure_from_balls

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance_log(pytestconfig):
    """Append one summary line per acceptance criterion."""
    lines = pytestconfig.stash[_LINES]

    def log(line):
        print(line)
        lines.append(line)
    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def lattice_k1():
    return measure_from_balls(plane_lattice_balls(1, 2, 3, 0.25), 1)


@pytest.fixture(scope="session")
def snowflake_mu():
    return measure_from_balls(snowflake_balls(SnowflakeSpec.constant(0.3, 4), 4, 0.25), 1)


def random_measure(rng, N, n, k, spread=1.0):
    return DiscreteMeasure(rng.uniform(-spread, spread, (N, n)), rng.uniform(0.1, 1.0, N), k)
