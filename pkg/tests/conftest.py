from __future__ import annotations

import json
from pathlib import Path

import pytest

from ucpe import feeds, graph, store
from ucpe.inconsistency import CanonicalDictionary

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def dictionary() -> CanonicalDictionary:
    return CanonicalDictionary.load(FIXTURES / "dictionary.json")


@pytest.fixture(scope="session")
def chrome_releases() -> list[str]:
    return json.loads((FIXTURES / "chrome_releases.json").read_text())


@pytest.fixture
def adversarial_store(tmp_path, dictionary) -> store.Store:
    """Store holding the adversarial feed plus the alias feed."""
    db = store.Store(tmp_path / "db")
    for name in ("adversarial_feed.jsonl", "alias_feed.jsonl"):
        store.build_database(feeds.ingest_nvd_feed(FIXTURES / name), dictionary, db)
    return db


@pytest.fixture
def adversarial_sys_graph(dictionary) -> graph.SysGraph:
    return graph.build_sys_graph(graph.load_inventory(FIXTURES / "adversarial_inventory.json"), dictionary)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
