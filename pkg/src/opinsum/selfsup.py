"""Self-supervised pair construction.

Each candidate target review is matched with the k most similar reviews
of the same entity (cosine similarity over unigram tf-idf vectors); the
sum of those similarities is the pair's relevance.  Because the subset
objective is additive over members, the subset argmax reduces to a
per-document top-k, which the test suite checks against brute-force
enumeration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .corpus import Corpus, Review
from .errors import DataError
from .tokenizer import word_tokens


@dataclass
class TfidfModel:
    """Unigram tf-idf vector space with L2-normalized document vectors."""

    feature_to_index: dict[str, int]
    idf: list[float]
    _cache: dict[str, dict[int, float]] = field(default_factory=dict, repr=False)

    def vector(self, review: Review) -> dict[int, float]:
        """Sparse L2-normalized tf-idf vector; empty dict for empty text."""
        cached = self._cache.get(review.review_id)
        if cached is not None:
            return cached
        counts: dict[int, float] = {}
        for w in word_tokens(review.text):
            j = self.feature_to_index.get(w)
            if j is not None:
                counts[j] = counts.get(j, 0.0) + 1.0
        vec = {j: c * self.idf[j] for j, c in counts.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        if norm > 0.0:
            vec = {j: v / norm for j, v in vec.items()}
        self._cache[review.review_id] = vec
        return vec


def fit_tfidf(corpus: Corpus) -> TfidfModel:
    """Fit idf weights: idf(f) = ln((1+N) / (1+df(f))) + 1."""
    if len(corpus) == 0:
        raise DataError("cannot fit tf-idf on an empty corpus")
    df: dict[str, int] = {}
    for r in corpus.reviews:
        for w in set(word_tokens(r.text)):
            df[w] = df.get(w, 0) + 1
    features = sorted(df)
    n = len(corpus)
    idf = [math.log((1.0 + n) / (1.0 + df[f])) + 1.0 for f in features]
    return TfidfModel(
        feature_to_index={f: i for i, f in enumerate(features)},
        idf=idf,
    )


def cosine_sim(model: TfidfModel, a: Review, b: Review) -> float:
    """Dot product of the normalized vectors; 0 when either is empty."""
    va, vb = model.vector(a), model.vector(b)
    if len(vb) < len(va):
        va, vb = vb, va
    return sum(v * vb.get(j, 0.0) for j, v in va.items())


def select_inputs(
    model: TfidfModel, target: Review, pool: list[Review], k: int
) -> tuple[list[Review], float]:
    """The k pool reviews most similar to the target, plus the summed score.

    Equivalent to the argmax over all size-k subsets because the objective
    is a sum of per-member similarities.  Ties break by ascending
    review_id; the returned inputs are canonicalized by review_id.
    """
    if len(pool) < k:
        raise DataError(f"pool of {len(pool)} smaller than k={k}")
    scored = sorted(
        ((cosine_sim(model, target, r), r) for r in pool),
        key=lambda t: (-t[0], t[1].review_id),
    )
    chosen = scored[:k]
    relevance = sum(s for s, _ in chosen)
    inputs = sorted((r for _, r in chosen), key=lambda r: r.review_id)
    return inputs, relevance


@dataclass
class TrainingPair:
    """A pseudo-summary target with its k input reviews."""

    target: Review
    inputs: tuple[Review, ...]
    relevance: float
    entity_rank: int = 0
    global_rank: int = 0

    def __post_init__(self):
        ids = {r.review_id for r in self.inputs}
        if self.target.review_id in ids:
            raise DataError("target appears among its own inputs")
        if any(r.entity_id != self.target.entity_id for r in self.inputs):
            raise DataError("inputs must share the target's entity")


@dataclass
class PairBuilderConfig:
    """k inputs per pair; per-entity candidate cap min(ceil(p*n), T)."""

    k: int = 8
    top_fraction: float = 0.15
    cap: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.top_fraction <= 1.0:
            raise DataError(f"top_fraction must be in (0, 1], got {self.top_fraction}")
        if self.cap < 1:
            raise DataError(f"cap must be >= 1, got {self.cap}")


# presets for corpora with many short reviews per entity vs few long ones
YELP_PAIR_CONFIG = PairBuilderConfig(k=8, top_fraction=0.15, cap=100)
ROTTEN_TOMATOES_PAIR_CONFIG = PairBuilderConfig(k=8, top_fraction=0.01, cap=150)


def build_pairs(
    corpus: Corpus, cfg: PairBuilderConfig, tfidf: TfidfModel | None = None
) -> list[TrainingPair]:
    """Construct training pairs for every entity, best candidates first.

    Per entity, every review is scored as a candidate target; the
    min(ceil(p * n_entity), T) highest-relevance candidates are kept,
    then all pairs are sorted globally by relevance.  Entities with fewer
    than k+1 reviews are skipped.
    """
    model = tfidf if tfidf is not None else fit_tfidf(corpus)
    pairs: list[TrainingPair] = []
    for entity in corpus.entities:
        reviews = corpus.entity_reviews(entity)
        if len(reviews) < cfg.k + 1:
            continue
        candidates = []
        for target in reviews:
            pool = [r for r in reviews if r.review_id != target.review_id]
            inputs, relevance = select_inputs(model, target, pool, cfg.k)
            candidates.append((relevance, target, inputs))
        candidates.sort(key=lambda t: (-t[0], t[1].review_id))
        n_keep = min(math.ceil(cfg.top_fraction * len(reviews)), cfg.cap)
        for rank, (relevance, target, inputs) in enumerate(candidates[:n_keep], 1):
            pairs.append(
                TrainingPair(
                    target=target,
                    inputs=tuple(inputs),
                    relevance=relevance,
                    entity_rank=rank,
                )
            )
    pairs.sort(key=lambda p: (-p.relevance, p.target.review_id))
    for i, p in enumerate(pairs, 1):
        p.global_rank = i
    return pairs


def save_pairs(pairs: list[TrainingPair], path) -> None:
    """Line-delimited pair records; texts resolve through the corpus file."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "target_review_id": p.target.review_id,
                        "input_review_ids": [r.review_id for r in p.inputs],
                        "relevance": p.relevance,
                        "entity_rank": p.entity_rank,
                        "global_rank": p.global_rank,
                    }
                )
                + "\n"
            )


def load_pairs(path, corpus: Corpus) -> list[TrainingPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: bad pair record: {e}") from e
            pairs.append(
                TrainingPair(
                    target=corpus.by_id(rec["target_review_id"]),
                    inputs=tuple(corpus.by_id(i) for i in rec["input_review_ids"]),
                    relevance=float(rec["relevance"]),
                    entity_rank=int(rec.get("entity_rank", 0)),
                    global_rank=int(rec.get("global_rank", 0)),
                )
            )
    return pairs
