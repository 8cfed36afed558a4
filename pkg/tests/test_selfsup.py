"""Tf-idf scoring, nearest-neighbour input selection and pair construction.

Every numeric claim here is checked against a straight-line oracle built
from the definitions: raw counts folded by hand for tf-idf, and exhaustive
subset enumeration for the input selection argmax.
"""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from opinsum.corpus import Corpus, Review, corpus_from_records
from opinsum.errors import DataError
from opinsum.selfsup import (
    PairBuilderConfig,
    TrainingPair,
    build_pairs,
    cosine_sim,
    fit_tfidf,
    load_pairs,
    save_pairs,
    select_inputs,
)
from opinsum.tokenizer import word_tokens

VOCAB = ["food", "slow", "service", "fresh", "cold", "tasty", "loud", "cozy"]


def naive_tfidf_vector(text, all_texts):
    """Reference vector from first principles, no shared code paths."""
    n = len(all_texts)
    df = Counter()
    for t in all_texts:
        df.update(set(word_tokens(t)))
    counts = Counter(word_tokens(text))
    vec = {
        w: c * (math.log((1.0 + n) / (1.0 + df[w])) + 1.0) for w, c in counts.items()
    }
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return {w: v / norm for w, v in vec.items()} if norm else {}


def naive_cosine(t1, t2, all_texts):
    v1 = naive_tfidf_vector(t1, all_texts)
    v2 = naive_tfidf_vector(t2, all_texts)
    return sum(v * v2.get(w, 0.0) for w, v in v1.items())


def random_entity(rng, entity, n, start=0):
    reviews = []
    for j in range(n):
        k = int(rng.integers(2, 8))
        text = " ".join(rng.choice(VOCAB, size=k))
        reviews.append(
            Review(f"{entity}-r{start + j:02d}", entity, text, int(rng.integers(1, 6)))
        )
    return reviews


class TestTfidf:
    def test_vectors_match_first_principles(self):
        rng = np.random.default_rng(42)
        reviews = random_entity(rng, "e0", 12)
        corpus = Corpus(reviews=tuple(reviews))
        model = fit_tfidf(corpus)
        texts = [r.text for r in reviews]
        inv = {i: f for f, i in model.feature_to_index.items()}
        for r in reviews:
            got = {inv[j]: v for j, v in model.vector(r).items()}
            want = naive_tfidf_vector(r.text, texts)
            assert got.keys() == want.keys()
            for w in want:
                assert got[w] == pytest.approx(want[w], abs=1e-12)

    def test_cosine_matches_first_principles(self):
        rng = np.random.default_rng(7)
        reviews = random_entity(rng, "e0", 10)
        corpus = Corpus(reviews=tuple(reviews))
        model = fit_tfidf(corpus)
        texts = [r.text for r in reviews]
        for a, b in itertools.combinations(reviews, 2):
            assert cosine_sim(model, a, b) == pytest.approx(
                naive_cosine(a.text, b.text, texts), abs=1e-12
            )

    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(1)
        reviews = random_entity(rng, "e0", 6)
        model = fit_tfidf(Corpus(reviews=tuple(reviews)))
        for r in reviews:
            assert cosine_sim(model, r, r) == pytest.approx(1.0, abs=1e-12)

    def test_unseen_words_ignored(self):
        corpus = Corpus(
            reviews=(
                Review("a", "e", "food slow", 3),
                Review("b", "e", "food fresh", 3),
            )
        )
        model = fit_tfidf(corpus)
        stranger = Review("c", "e", "zzz qqq", 3)
        assert model.vector(stranger) == {}
        assert cosine_sim(model, stranger, corpus.reviews[0]) == 0.0

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            fit_tfidf(Corpus(reviews=()))


class TestSelectInputs:
    def brute_force(self, model, target, pool, k):
        """argmax over all size-k subsets of the summed-similarity objective,
        ties resolved toward the lexicographically smallest id tuple."""
        best_key, best_subset = None, None
        for subset in itertools.combinations(sorted(pool, key=lambda r: r.review_id), k):
            score = sum(cosine_sim(model, target, r) for r in subset)
            key = (-score, tuple(r.review_id for r in subset))
            if best_key is None or key < best_key:
                best_key, best_subset = key, subset
        return list(best_subset), -best_key[0]

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(23)
        for trial in range(20):
            n = int(rng.integers(3, 8))
            reviews = random_entity(rng, f"e{trial}", n)
            model = fit_tfidf(Corpus(reviews=tuple(reviews)))
            target, pool = reviews[0], reviews[1:]
            k = int(rng.integers(1, len(pool) + 1))
            inputs, relevance = select_inputs(model, target, pool, k)
            want_inputs, want_rel = self.brute_force(model, target, pool, k)
            assert [r.review_id for r in inputs] == [r.review_id for r in want_inputs]
            assert relevance == pytest.approx(want_rel, abs=1e-9)

    def test_ties_break_by_ascending_review_id(self):
        # identical texts give identical similarities; ids must decide
        reviews = [Review(f"r{j}", "e", "food slow service", 3) for j in range(6)]
        model = fit_tfidf(Corpus(reviews=tuple(reviews)))
        inputs, _ = select_inputs(model, reviews[5], reviews[:5], 3)
        assert [r.review_id for r in inputs] == ["r0", "r1", "r2"]

    def test_pool_too_small_rejected(self):
        reviews = [Review(f"r{j}", "e", "food", 3) for j in range(3)]
        model = fit_tfidf(Corpus(reviews=tuple(reviews)))
        with pytest.raises(DataError):
            select_inputs(model, reviews[0], reviews[1:], 3)


class TestTrainingPair:
    def test_target_among_inputs_rejected(self):
        r = [Review(f"r{j}", "e", "food", 3) for j in range(3)]
        with pytest.raises(DataError):
            TrainingPair(target=r[0], inputs=(r[0], r[1]), relevance=1.0)

    def test_cross_entity_inputs_rejected(self):
        a = Review("a", "e1", "food", 3)
        b = Review("b", "e2", "food", 3)
        with pytest.raises(DataError):
            TrainingPair(target=a, inputs=(b,), relevance=1.0)


class TestBuildPairs:
    def make_corpus(self, rng, sizes):
        reviews = []
        for i, n in enumerate(sizes):
            reviews.extend(random_entity(rng, f"e{i}", n))
        return Corpus(reviews=tuple(reviews))

    def test_per_entity_keep_count(self):
        rng = np.random.default_rng(3)
        corpus = self.make_corpus(rng, [10, 20, 40])
        cfg = PairBuilderConfig(k=4, top_fraction=0.15, cap=3)
        pairs = build_pairs(corpus, cfg)
        per_entity = Counter(p.target.entity_id for p in pairs)
        # ceil(0.15*10)=2, ceil(0.15*20)=3, ceil(0.15*40)=6 capped at 3
        assert per_entity == {"e0": 2, "e1": 3, "e2": 3}

    def test_entities_below_k_plus_one_skipped(self):
        rng = np.random.default_rng(4)
        corpus = self.make_corpus(rng, [5, 12])
        pairs = build_pairs(corpus, PairBuilderConfig(k=5, top_fraction=1.0, cap=99))
        assert {p.target.entity_id for p in pairs} == {"e1"}

    def test_global_order_is_relevance_descending(self):
        rng = np.random.default_rng(5)
        corpus = self.make_corpus(rng, [12, 12])
        pairs = build_pairs(corpus, PairBuilderConfig(k=3, top_fraction=0.5, cap=99))
        rels = [p.relevance for p in pairs]
        assert rels == sorted(rels, reverse=True)
        assert [p.global_rank for p in pairs] == list(range(1, len(pairs) + 1))

    def test_entity_candidates_are_its_best(self):
        # kept candidates must beat every discarded same-entity candidate
        rng = np.random.default_rng(6)
        corpus = self.make_corpus(rng, [14])
        model = fit_tfidf(corpus)
        cfg = PairBuilderConfig(k=4, top_fraction=0.2, cap=99)
        pairs = build_pairs(corpus, cfg, tfidf=model)
        kept = {p.target.review_id for p in pairs}
        all_scores = {}
        for target in corpus.reviews:
            pool = [r for r in corpus.reviews if r.review_id != target.review_id]
            _, rel = select_inputs(model, target, pool, cfg.k)
            all_scores[target.review_id] = rel
        worst_kept = min(all_scores[i] for i in kept)
        best_dropped = max(
            (s for i, s in all_scores.items() if i not in kept), default=-1.0
        )
        assert worst_kept >= best_dropped - 1e-12

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        corpus = self.make_corpus(rng, [11])
        pairs = build_pairs(corpus, PairBuilderConfig(k=3, top_fraction=0.5, cap=99))
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, path)
        loaded = load_pairs(path, corpus)
        assert len(loaded) == len(pairs)
        for a, b in zip(pairs, loaded):
            assert a.target.review_id == b.target.review_id
            assert [r.review_id for r in a.inputs] == [r.review_id for r in b.inputs]
            assert a.relevance == b.relevance  # exact through JSON float repr
            assert (a.entity_rank, a.global_rank) == (b.entity_rank, b.global_rank)

    def test_config_validation(self):
        with pytest.raises(DataError):
            PairBuilderConfig(k=0)
        with pytest.raises(DataError):
            PairBuilderConfig(top_fraction=0.0)
        with pytest.raises(DataError):
            PairBuilderConfig(cap=0)
