"""Review data model, corpus ingestion and entity-level train/valid splits.

A corpus file is UTF-8 line-delimited JSON, one review per line, with the
fields ``review_id``, ``entity_id``, ``text``, ``rating`` and
``categories``.  Malformed lines are skipped (with a counter reported on
stderr); structural corruption such as duplicate review ids aborts.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("review_id", "entity_id", "text", "rating", "categories")


@dataclass(frozen=True)
class Review:
    """One user review: the atom of every pipeline stage."""

    review_id: str
    entity_id: str
    text: str
    rating: int
    categories: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.review_id:
            raise DataError("review_id must be non-empty")
        if not self.entity_id:
            raise DataError("entity_id must be non-empty")
        if not self.text.strip():
            raise DataError(f"review {self.review_id}: empty text")
        if not isinstance(self.rating, int) or not 1 <= self.rating <= 5:
            raise DataError(f"review {self.review_id}: rating {self.rating!r} not in [1, 5]")


@dataclass
class Corpus:
    """Immutable-after-construction collection of reviews, indexed by entity."""

    reviews: tuple[Review, ...]
    entity_index: dict[str, tuple[int, ...]] = field(default_factory=dict)
    skipped_lines: int = 0

    def __post_init__(self):
        if not self.entity_index:
            self.entity_index = _build_entity_index(self.reviews)

    def __len__(self) -> int:
        return len(self.reviews)

    @property
    def entities(self) -> list[str]:
        return sorted(self.entity_index)

    @property
    def categories(self) -> list[str]:
        cats = set()
        for r in self.reviews:
            cats.update(r.categories)
        return sorted(cats)

    def entity_reviews(self, entity_id: str) -> list[Review]:
        try:
            idxs = self.entity_index[entity_id]
        except KeyError:
            raise DataError(f"unknown entity {entity_id!r}") from None
        return [self.reviews[i] for i in idxs]

    def by_id(self, review_id: str) -> Review:
        if not hasattr(self, "_id_map"):
            object.__setattr__(self, "_id_map", {r.review_id: r for r in self.reviews})
        try:
            return self._id_map[review_id]
        except KeyError:
            raise DataError(f"unknown review id {review_id!r}") from None


def _build_entity_index(reviews: Sequence[Review]) -> dict[str, tuple[int, ...]]:
    index: dict[str, list[int]] = {}
    seen_ids: set[str] = set()
    for i, r in enumerate(reviews):
        if r.review_id in seen_ids:
            raise DataError(f"duplicate review_id {r.review_id!r}")
        seen_ids.add(r.review_id)
        index.setdefault(r.entity_id, []).append(i)
    return {e: tuple(v) for e, v in index.items()}


def _parse_line(line: str) -> Review:
    record = json.loads(line)
    if not isinstance(record, dict):
        raise DataError("record is not an object")
    missing = [f for f in REQUIRED_FIELDS if f not in record]
    if missing:
        raise DataError(f"missing fields: {missing}")
    cats = record["categories"]
    if isinstance(cats, str) or not isinstance(cats, (list, tuple, set)):
        raise DataError("categories must be a list of strings")
    return Review(
        review_id=str(record["review_id"]),
        entity_id=str(record["entity_id"]),
        text=str(record["text"]),
        rating=record["rating"] if isinstance(record["rating"], int) else -1,
        categories=frozenset(str(c) for c in cats),
    )


def ingest_corpus(path, min_reviews_per_entity: int = 9) -> Corpus:
    """Read a line-delimited review file, dropping small entities.

    Entities with fewer than ``min_reviews_per_entity`` reviews are removed
    wholesale (pair construction needs k neighbours plus a target).
    Malformed lines are skipped and counted; duplicate review ids raise.
    """
    reviews: list[Review] = []
    skipped = 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                reviews.append(_parse_line(line))
            except (json.JSONDecodeError, DataError) as e:
                skipped += 1
                log.warning("%s:%d: skipping malformed line (%s)", path, lineno, e)
    if not reviews:
        raise DataError(f"{path}: no valid reviews")

    index = _build_entity_index(reviews)  # raises on duplicate ids
    keep = {e for e, idxs in index.items() if len(idxs) >= min_reviews_per_entity}
    kept_reviews = tuple(r for r in reviews if r.entity_id in keep)
    if not kept_reviews:
        raise DataError(
            f"{path}: no entity has >= {min_reviews_per_entity} reviews"
        )
    if skipped:
        log.warning("%s: skipped %d malformed line(s)", path, skipped)
    return Corpus(reviews=kept_reviews, skipped_lines=skipped)


def serialize_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to the line-delimited format it was read from."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.reviews:
            record = {
                "review_id": r.review_id,
                "entity_id": r.entity_id,
                "text": r.text,
                "rating": r.rating,
                "categories": sorted(r.categories),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def partition_corpus(corpus: Corpus, valid_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Split at entity granularity; deterministic for a fixed seed.

    The validation split receives ``floor(valid_fraction * n_entities)``
    entities, at least one.  No entity straddles the two splits.
    """
    if not 0.0 < valid_fraction < 1.0:
        raise DataError(f"valid_fraction must be in (0, 1), got {valid_fraction}")
    entities = sorted(corpus.entity_index)
    if len(entities) < 2:
        raise DataError("need at least 2 entities to partition")
    rng = random.Random(seed)
    shuffled = entities[:]
    rng.shuffle(shuffled)
    n_valid = max(1, math.floor(valid_fraction * len(entities)))
    valid_set = set(shuffled[:n_valid])
    train = tuple(r for r in corpus.reviews if r.entity_id not in valid_set)
    valid = tuple(r for r in corpus.reviews if r.entity_id in valid_set)
    return Corpus(reviews=train), Corpus(reviews=valid)


def corpus_from_records(records: Iterable[dict]) -> Corpus:
    """Build a corpus directly from dict records (used by fixtures and tests)."""
    reviews = tuple(
        Review(
            review_id=str(rec["review_id"]),
            entity_id=str(rec["entity_id"]),
            text=str(rec["text"]),
            rating=int(rec["rating"]),
            categories=frozenset(rec.get("categories", ())),
        )
        for rec in records
    )
    return Corpus(reviews=reviews)
