from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "arena", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("arena")

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
CONFIGS = ROOT / "configs"


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
