from pathlib import Path

import pytest

from app.config import settings
from app.services.simulate import generate, scenario

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def pytest_collection_modifyitems(config, items):
    if settings.run_slow_tests:
        return
    skip_slow = pytest.mark.skip(reason="acceptance-scale run; set MNAR_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def s1_data():
    return generate(scenario("S1"), 600, seed=11)
