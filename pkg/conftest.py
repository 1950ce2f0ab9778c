"""
Shared fixtures for the root test modules.
"""
from pathlib import Path

import pytest

from message_security import ModelBackend, NoncePool
from servnet_sim import load_scenario

SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def backend() -> ModelBackend:
    return ModelBackend(seed=1)


@pytest.fixture
def nonces() -> NoncePool:
    return NoncePool(seed=5)


@pytest.fixture
def honest_pair():
    return load_scenario(SCENARIO_DIR / "honest_pair.json")
