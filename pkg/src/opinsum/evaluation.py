"""Automatic summary metrics and the prompt-compliance experiment.

ROUGE-1/2/L (clipped n-gram overlap and longest common subsequence),
distinct n-gram ratios at the summary and corpus level, 3-class
sentiment accuracy against the bucket of the mean input rating, and
pooled micro-F1 for multi-label category predictions.  All functions
tokenize with the same lowercased, punctuation-stripped word rules the
classifiers use.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .control import (
    ControlLexicon,
    category_token,
    ngram_token,
    polarity_token,
    train_binary_classifier,
)
from .corpus import Corpus
from .decoding import DecodeConfig, generate_with_prompt
from .errors import DataError
from .tokenizer import EOS_ID, SEP, NgramFeatureSpace, ngram_in_words, word_tokens


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f_score(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngram_counter(words: list, n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap F-score, n in {1, 2}."""
    if n not in (1, 2):
        raise DataError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = _ngram_counter(word_tokens(candidate), n)
    ref = _ngram_counter(word_tokens(reference), n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items() if g in ref)
    n_cand, n_ref = sum(cand.values()), sum(ref.values())
    precision = overlap / n_cand if n_cand else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    return RougeScore(precision, recall, _f_score(precision, recall))


def _lcs_length(a: list, b: list) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """Longest-common-subsequence F-score over words."""
    cand, ref = word_tokens(candidate), word_tokens(reference)
    lcs = _lcs_length(cand, ref)
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref) if ref else 0.0
    return RougeScore(precision, recall, _f_score(precision, recall))


@dataclass
class DistReport:
    """Distinct n-gram ratios for n = 1..3."""

    summary_level: dict  # n -> mean over summaries with >= n words
    corpus_level: dict  # n -> pooled distinct / pooled total
    skipped: dict  # n -> summaries too short to score


def dist_metrics(summaries) -> DistReport:
    texts = list(summaries)
    if not texts:
        raise DataError("dist_metrics needs at least one summary")
    tokenized = [word_tokens(t) for t in texts]
    summary_level: dict = {}
    corpus_level: dict = {}
    skipped: dict = {}
    for n in (1, 2, 3):
        ratios = []
        pooled: Counter = Counter()
        n_short = 0
        for words in tokenized:
            grams = _ngram_counter(words, n)
            total = sum(grams.values())
            if total == 0:
                n_short += 1
                continue
            ratios.append(len(grams) / total)
            pooled.update(grams)
        if not ratios:
            raise DataError(f"every summary is shorter than n={n} words")
        summary_level[n] = sum(ratios) / len(ratios)
        corpus_level[n] = len(pooled) / sum(pooled.values())
        skipped[n] = n_short
    return DistReport(summary_level, corpus_level, skipped)


# --- sentiment ----------------------------------------------------------

SENTIMENT_CLASSES = ("negative", "neutral", "positive")


def sentiment_bucket(rating: int) -> str:
    """1-2 stars negative, 3 neutral, 4-5 positive."""
    if rating <= 2:
        return "negative"
    if rating == 3:
        return "neutral"
    return "positive"


def bucket_of_mean(mean_rating: float) -> str:
    """Bucket of the mean input rating, rounded half up to a whole star."""
    rounded = int(min(max(math.floor(mean_rating + 0.5), 1), 5))
    return sentiment_bucket(rounded)


@dataclass
class SentimentClassifier:
    """Three one-vs-rest classifiers; prediction is the argmax decision."""

    classifiers: tuple  # aligned with SENTIMENT_CLASSES

    def predict(self, text: str) -> str:
        values = [clf.decision_from_text(text) for clf in self.classifiers]
        best = max(range(len(values)), key=lambda i: (values[i], -i))
        return SENTIMENT_CLASSES[best]


def train_sentiment_classifier(
    corpus: Corpus,
    neg_ratio: float = 1.0,
    reg_strength: float = 1.0,
    seed: int = 0,
    min_pos: int = 20,
    max_epochs: int = 200,
) -> SentimentClassifier:
    """One-vs-rest over rating buckets, sharing the category solver."""
    texts = [r.text for r in corpus.reviews]
    space = NgramFeatureSpace.fit(texts)
    buckets = [sentiment_bucket(r.rating) for r in corpus.reviews]
    classifiers = []
    for i, cls in enumerate(SENTIMENT_CLASSES):
        classifiers.append(
            train_binary_classifier(
                texts,
                [b == cls for b in buckets],
                f"sentiment:{cls}",
                neg_ratio=neg_ratio,
                reg_strength=reg_strength,
                seed=seed + i,
                feature_space=space,
                min_pos=min_pos,
                max_epochs=max_epochs,
            )
        )
    return SentimentClassifier(classifiers=tuple(classifiers))


def sentiment_accuracy(
    classifier: SentimentClassifier, summaries, input_rating_means
) -> float:
    """Fraction of summaries whose predicted class matches the bucket of
    the rounded mean input rating."""
    summaries, means = list(summaries), list(input_rating_means)
    if len(summaries) != len(means):
        raise DataError("summaries and rating means differ in length")
    if not summaries:
        raise DataError("sentiment_accuracy over an empty set")
    hits = sum(
        classifier.predict(s) == bucket_of_mean(m) for s, m in zip(summaries, means)
    )
    return hits / len(summaries)


def category_micro_f1(classifiers, summaries, gold_category_sets) -> float:
    """Micro-F1 of multi-label category predictions (decision value > 0),
    computed from pooled true/false positive and false negative counts."""
    summaries, gold_sets = list(summaries), [set(g) for g in gold_category_sets]
    if len(summaries) != len(gold_sets):
        raise DataError("summaries and gold category sets differ in length")
    tp = fp = fn = 0
    for text, gold in zip(summaries, gold_sets):
        predicted = {c.label for c in classifiers if c.decision_from_text(text) > 0.0}
        tp += len(predicted & gold)
        fp += len(predicted - gold)
        fn += len(gold - predicted)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return _f_score(precision, recall)


# --- aggregate report ---------------------------------------------------


@dataclass
class EvalExample:
    """One scored generation: candidate vs reference plus side labels."""

    candidate: str
    reference: str
    input_mean_rating: float = 3.0
    gold_categories: frozenset = frozenset()


@dataclass
class EvalReport:
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    dist_1: float
    dist_2: float
    dist_3: float
    dist_c_1: float
    dist_c_2: float
    dist_c_3: float
    sentiment_accuracy: float | None
    category_micro_f1: float | None
    n_examples: int = 0

    def rows(self) -> list:
        """(metric, value) pairs in a fixed order for the report files."""
        out = [
            ("rouge1_f", self.rouge1_f),
            ("rouge2_f", self.rouge2_f),
            ("rougeL_f", self.rougeL_f),
            ("dist_1", self.dist_1),
            ("dist_2", self.dist_2),
            ("dist_3", self.dist_3),
            ("dist_c_1", self.dist_c_1),
            ("dist_c_2", self.dist_c_2),
            ("dist_c_3", self.dist_c_3),
        ]
        if self.sentiment_accuracy is not None:
            out.append(("sentiment_accuracy", self.sentiment_accuracy))
        if self.category_micro_f1 is not None:
            out.append(("category_micro_f1", self.category_micro_f1))
        out.append(("n_examples", float(self.n_examples)))
        return out


def evaluate_summaries(
    examples: list,
    sentiment: SentimentClassifier | None = None,
    category_classifiers=None,
) -> EvalReport:
    """Aggregate every metric over candidate/reference pairs."""
    if not examples:
        raise DataError("evaluate_summaries needs at least one example")
    r1 = [rouge_n(e.candidate, e.reference, 1).f1 for e in examples]
    r2 = [rouge_n(e.candidate, e.reference, 2).f1 for e in examples]
    rl = [rouge_l(e.candidate, e.reference).f1 for e in examples]
    dist = dist_metrics([e.candidate for e in examples])
    sent_acc = None
    if sentiment is not None:
        sent_acc = sentiment_accuracy(
            sentiment,
            [e.candidate for e in examples],
            [e.input_mean_rating for e in examples],
        )
    cat_f1 = None
    if category_classifiers:
        cat_f1 = category_micro_f1(
            category_classifiers,
            [e.candidate for e in examples],
            [e.gold_categories for e in examples],
        )
    n = len(examples)
    return EvalReport(
        rouge1_f=sum(r1) / n,
        rouge2_f=sum(r2) / n,
        rougeL_f=sum(rl) / n,
        dist_1=dist.summary_level[1],
        dist_2=dist.summary_level[2],
        dist_3=dist.summary_level[3],
        dist_c_1=dist.corpus_level[1],
        dist_c_2=dist.corpus_level[2],
        dist_c_3=dist.corpus_level[3],
        sentiment_accuracy=sent_acc,
        category_micro_f1=cat_f1,
        n_examples=n,
    )


# --- prompt compliance --------------------------------------------------


@dataclass
class ComplianceReport:
    """Per-generation prompt-token realization rates for both conditions."""

    correct_fractions: list = field(repr=False, default_factory=list)
    incorrect_fractions: list = field(repr=False, default_factory=list)
    n_reviews_used: int = 0
    n_skipped: int = 0
    tokens_per_prompt: int = 8

    @property
    def mean_correct(self) -> float:
        return sum(self.correct_fractions) / max(len(self.correct_fractions), 1)

    @property
    def mean_incorrect(self) -> float:
        return sum(self.incorrect_fractions) / max(len(self.incorrect_fractions), 1)

    @property
    def gap(self) -> float:
        return self.mean_correct - self.mean_incorrect

    @property
    def over_half_correct(self) -> float:
        """Share of correct-prompt generations realizing more than half
        of their prompt tokens."""
        if not self.correct_fractions:
            return 0.0
        return sum(f > 0.5 for f in self.correct_fractions) / len(
            self.correct_fractions
        )


def control_compliance(
    model,
    vocab,
    corpus: Corpus,
    lexicon: ControlLexicon,
    decode_cfg: DecodeConfig,
    n_reviews: int = 100,
    repeats: int = 1,
    tokens_per_prompt: int = 8,
    seed: int = 0,
) -> ComplianceReport:
    """Decode each sampled review twice per repeat: once prompted with
    lexicon n-grams present in the review, once with absent ones; the
    score of a generation is the fraction of prompted n-grams realized
    in the output text.  Reviews without enough present or absent
    lexicon n-grams are skipped and counted.
    """
    if n_reviews < 1 or repeats < 1:
        raise DataError("n_reviews and repeats must be positive")
    all_grams = lexicon.all_ngrams()
    entity_cats = {
        e: sorted(frozenset().union(*(r.categories for r in corpus.entity_reviews(e))))
        for e in corpus.entities
    }
    eligible = []
    n_skipped = 0
    for review in sorted(corpus.reviews, key=lambda r: r.review_id):
        words = word_tokens(review.text)
        present = [g for g in all_grams if ngram_in_words(g, words)]
        absent = [g for g in all_grams if not ngram_in_words(g, words)]
        if len(present) < tokens_per_prompt or len(absent) < tokens_per_prompt:
            n_skipped += 1
            continue
        eligible.append((review, present, absent))
    if not eligible:
        raise DataError("no review has enough matching lexicon n-grams")
    rng = np.random.default_rng(seed)
    if len(eligible) > n_reviews:
        keep = sorted(rng.choice(len(eligible), size=n_reviews, replace=False).tolist())
        eligible = [eligible[i] for i in keep]

    report = ComplianceReport(tokens_per_prompt=tokens_per_prompt)
    report.n_skipped = n_skipped
    report.n_reviews_used = len(eligible)
    for review, present, absent in eligible:
        source = [*vocab.encode(review.text)[: decode_cfg.max_source_len - 1], EOS_ID]
        cats = entity_cats[review.entity_id]
        for _ in range(repeats):
            for pool, sink in (
                (present, report.correct_fractions),
                (absent, report.incorrect_fractions),
            ):
                pick = rng.choice(len(pool), size=tokens_per_prompt, replace=False)
                chosen = sorted(
                    (pool[i] for i in pick),
                    key=lambda g: (-lexicon.weight(g), g),
                )
                prompt = [
                    polarity_token([review.rating]),
                    *(category_token(c) for c in cats),
                    *(ngram_token(g) for g in chosen),
                    SEP,
                ]
                out = generate_with_prompt(model, vocab, [source], prompt, decode_cfg)
                out_words = word_tokens(out.text)
                realized = sum(ngram_in_words(g, out_words) for g in chosen)
                sink.append(realized / tokens_per_prompt)
    return report
