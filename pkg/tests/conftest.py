"""Session fixtures: bundled graphs, datasets, and linking indexes."""

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from convkgqa.dataset import load_conversations
from convkgqa.kg import load_source_dump
from convkgqa.linking import build_index

DATA = Path(__file__).resolve().parents[1] / "data"

settings.register_profile(
    "suite", deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def mini_kg():
    kg, report = load_source_dump(DATA / "mini_kg")
    assert not report.errors
    return kg


@pytest.fixture(scope="session")
def suite_kg():
    kg, report = load_source_dump(DATA / "suite_kg")
    assert not report.errors
    return kg


@pytest.fixture(scope="session")
def mini_conversations():
    return load_conversations(DATA / "mini_dataset.jsonl")


@pytest.fixture(scope="session")
def mini_conversation(mini_conversations):
    return mini_conversations[0]


@pytest.fixture(scope="session")
def suite_conversations():
    return load_conversations(DATA / "suite_dataset.jsonl")


@pytest.fixture(scope="session")
def mini_index(mini_kg):
    return build_index(mini_kg)


@pytest.fixture(scope="session")
def suite_index(suite_kg):
    return build_index(suite_kg)
