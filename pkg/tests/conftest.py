import numpy as np
import pytest

from epimob.mobility import SyntheticCitySpec, TimeRange, generate_synthetic_city

# 2012-07-01 00:00 local (UTC+9) as UTC epoch seconds.
START = 1341068400
DAY = 86400


def horizon(days: int) -> TimeRange:
    return TimeRange(START, START + days * DAY)


@pytest.fixture(scope="session")
def small_city():
    """300 users, 7 days; big enough for commuting structure, fast to run."""
    spec = SyntheticCitySpec(n_users=300, rng_seed=11)
    return generate_synthetic_city(spec, horizon(7))


@pytest.fixture(scope="session")
def small_city_raws():
    from epimob.mobility import synthesize_raw

    spec = SyntheticCitySpec(n_users=300, rng_seed=11)
    return synthesize_raw(spec, horizon(7))


@pytest.fixture(scope="session")
def rng():
    return np.random.Generator(np.random.Philox(123))


# One line per release criterion, filled in by tests/test_acceptance.py and
# echoed after the run so the gate is visible even with output capture on.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("release gate")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
