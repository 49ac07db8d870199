import os

import numpy as np
import pytest
from hypothesis import settings

from pricefusion.model import TRUE_PARAMETERS, ObservationSet
from pricefusion.simulator import (
    ConjointConfig,
    MarketConfig,
    PopulationSpec,
    simulate_conjoint,
    simulate_purchase_history,
    synthesize_population,
)

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PRICEFUSION_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="paper-scale run; set PRICEFUSION_PAPER_SCALE=1")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_population():
    return synthesize_population(PopulationSpec(size=20_000, seed=11))


@pytest.fixture(scope="session")
def small_market(small_population):
    return simulate_purchase_history(small_population, MarketConfig(n0=30, horizon=6), TRUE_PARAMETERS, seed=5)


@pytest.fixture(scope="session")
def small_data(small_population, small_market):
    cj = simulate_conjoint(small_population, small_market, ConjointConfig(participants_per_group=5),
                           TRUE_PARAMETERS, seed=6)
    return ObservationSet.concat([small_market.history, cj])


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
