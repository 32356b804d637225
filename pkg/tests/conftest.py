from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from pest_advisor.domain import PestScenario
from pest_advisor.knowledge import load_seed_corpus
from pest_advisor.llm import BackendConfig
from pest_advisor.synthetic import generate_synthetic

DATA = resources.files("pest_advisor") / "data"
FIXTURES = Path(__file__).parent / "fixtures"


def bundled_scenario(name: str) -> PestScenario:
    return PestScenario.from_json(json.loads((DATA / "scenarios" / name).read_text(encoding="utf-8")))


@pytest.fixture
def bcn() -> PestScenario:
    """Beet cyst nematode in sugar beet, labelled false."""
    return bundled_scenario("beet_cyst_nematode.json")


@pytest.fixture
def fln() -> PestScenario:
    """Free-living nematodes in sugar beet at 800 per litre."""
    return bundled_scenario("free_living_nematodes.json")


@pytest.fixture(scope="session")
def seed_corpus():
    return load_seed_corpus()


@pytest.fixture(scope="session")
def scripted() -> BackendConfig:
    return BackendConfig()


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(seed=0)
