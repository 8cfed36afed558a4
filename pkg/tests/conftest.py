"""Shared fixtures: paths to bundled data and small synthetic corpora."""

from pathlib import Path

import pytest

from opinsum.corpus import corpus_from_records, ingest_corpus

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def make_records(n_entities=3, per_entity=10, category="diner"):
    """Tiny deterministic corpus records, one category, ratings cycling 1..5."""
    records = []
    for e in range(n_entities):
        for j in range(per_entity):
            records.append(
                {
                    "review_id": f"e{e}-r{j:02d}",
                    "entity_id": f"e{e}",
                    "text": f"word{j} filler{e} common token review number {j}",
                    "rating": 1 + (j % 5),
                    "categories": [category],
                }
            )
    return records


@pytest.fixture(scope="session")
def mini_corpus_path():
    path = DATA_DIR / "mini_corpus.jsonl"
    assert path.exists(), "bundled mini corpus missing; run python -m opinsum.minicorpus"
    return path


@pytest.fixture(scope="session")
def mini_corpus(mini_corpus_path):
    return ingest_corpus(mini_corpus_path)


@pytest.fixture()
def toy_corpus():
    return corpus_from_records(make_records())
