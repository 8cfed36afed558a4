"""Control-token mining and review augmentation.

Per category, a linear classifier is trained with squared hinge loss and
L1 regularization by cyclic proximal coordinate descent; its positive
weights, L1-renormalized, form the category's ranked aspect lexicon.
Reviews are augmented with a control prefix: a polarity token, the
entity's category tokens, and up to eight lexicon n-grams that occur
verbatim in the review, followed by a separator.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Review
from .errors import DataError
from .tokenizer import (
    CTRL_CLOSE,
    CTRL_OPEN,
    SEP,
    NgramFeatureSpace,
    ngram_in_words,
    word_tokens,
)

log = logging.getLogger(__name__)

POLARITY_BUCKETS = [x / 2.0 for x in range(2, 11)]  # 1.0, 1.5, ..., 5.0


def _ctrl(kind: str, payload: str) -> str:
    return f"{CTRL_OPEN}{kind}_{payload}{CTRL_CLOSE}"


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9.]+", "-", text.lower()).strip("-")


def polarity_token(ratings) -> str:
    """Mean star rating bucketed to the nearest 0.5, ties rounding up."""
    ratings = list(ratings)
    if not ratings:
        raise DataError("polarity_token needs at least one rating")
    mean = sum(ratings) / len(ratings)
    bucket = math.floor(mean * 2.0 + 0.5) / 2.0
    bucket = min(max(bucket, 1.0), 5.0)
    return _ctrl("pol", f"{bucket:.1f}")


def category_token(category: str) -> str:
    return _ctrl("cat", _slug(category))


def ngram_token(ngram: str) -> str:
    return _ctrl("ng", _slug(ngram))


@dataclass
class LinearClassifier:
    """One-vs-rest linear classifier over unigram+bigram count features."""

    label: str
    weights: np.ndarray
    bias: float
    feature_space: NgramFeatureSpace
    converged: bool = True
    epochs_run: int = 0

    def decision_value(self, review: Review) -> float:
        return self.decision_from_text(review.text)

    def decision_from_text(self, text: str) -> float:
        counts = self.feature_space.counts(text)
        return float(sum(self.weights[j] * c for j, c in counts.items()) + self.bias)


def _squared_hinge_objective(X, y, theta, bias, reg_strength) -> float:
    margins = 1.0 - y * (X @ theta + bias)
    active = np.maximum(margins, 0.0)
    return float(np.dot(active, active) + reg_strength * np.abs(theta).sum())


def train_binary_classifier(
    texts: list,
    positive: list,
    label: str,
    neg_ratio: float = 1.0,
    reg_strength: float = 1.0,
    seed: int = 0,
    feature_space: NgramFeatureSpace | None = None,
    min_pos: int = 20,
    max_epochs: int = 200,
    tol: float = 1e-6,
) -> LinearClassifier:
    """Train a one-vs-rest text classifier by proximal coordinate descent.

    Minimizes sum_i max(0, 1 - y_i (theta.x_i + b))^2 + lambda * ||theta||_1
    with soft-threshold coordinate updates; each update majorizes the
    smooth term with its coordinate curvature bound, so the objective is
    non-increasing.  Negatives are sampled without replacement at
    neg_ratio x positives; everything is deterministic given the seed.
    """
    space = feature_space or NgramFeatureSpace.fit(texts)
    pos_idx = [i for i, p in enumerate(positive) if p]
    if len(pos_idx) < min_pos:
        raise DataError(
            f"label {label!r}: {len(pos_idx)} positives < min_pos={min_pos}"
        )
    neg_pool = [i for i, p in enumerate(positive) if not p]
    n_neg = min(len(neg_pool), int(round(neg_ratio * len(pos_idx))))
    if n_neg == 0:
        raise DataError(f"label {label!r}: no negative examples available")
    rng = np.random.default_rng(seed)
    neg_idx = sorted(rng.choice(len(neg_pool), size=n_neg, replace=False).tolist())
    rows = pos_idx + [neg_pool[i] for i in neg_idx]

    d = len(space)
    X = np.zeros((len(rows), d))
    for row, i in enumerate(rows):
        for j, c in space.counts(texts[i]).items():
            X[row, j] = c
    y = np.concatenate([np.ones(len(pos_idx)), -np.ones(n_neg)])

    theta = np.zeros(d)
    bias = 0.0
    # Coordinate curvature bounds of the squared hinge term.
    col_curv = 2.0 * (X * X).sum(axis=0)
    bias_curv = 2.0 * len(rows)
    scores = np.zeros(len(rows))  # X @ theta + bias, maintained incrementally

    active_cols = np.flatnonzero(col_curv > 0.0)
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        max_delta = 0.0
        for j in active_cols:
            margins = 1.0 - y * scores
            live = margins > 0.0
            grad = -2.0 * np.dot(y[live] * X[live, j], margins[live])
            step = theta[j] - grad / col_curv[j]
            new_w = math.copysign(
                max(abs(step) - reg_strength / col_curv[j], 0.0), step
            )
            delta = new_w - theta[j]
            if delta != 0.0:
                scores += delta * X[:, j]
                theta[j] = new_w
                max_delta = max(max_delta, abs(delta))
        margins = 1.0 - y * scores
        live = margins > 0.0
        grad_b = -2.0 * np.dot(y[live], margins[live])
        delta_b = -grad_b / bias_curv
        if delta_b != 0.0:
            scores += delta_b
            bias += delta_b
            max_delta = max(max_delta, abs(delta_b))
        if max_delta < tol:
            converged = True
            break
    if not converged:
        log.warning(
            "label %r: coordinate descent hit max_epochs=%d without converging",
            label,
            max_epochs,
        )
    return LinearClassifier(
        label=label,
        weights=theta,
        bias=bias,
        feature_space=space,
        converged=converged,
        epochs_run=epoch,
    )


def train_category_classifier(
    corpus: Corpus,
    category: str,
    neg_ratio: float = 1.0,
    reg_strength: float = 1.0,
    seed: int = 0,
    feature_space: NgramFeatureSpace | None = None,
    min_pos: int = 20,
    max_epochs: int = 200,
    tol: float = 1e-6,
) -> LinearClassifier:
    """Category-membership classifier over a corpus (one-vs-rest)."""
    return train_binary_classifier(
        [r.text for r in corpus.reviews],
        [category in r.categories for r in corpus.reviews],
        category,
        neg_ratio=neg_ratio,
        reg_strength=reg_strength,
        seed=seed,
        feature_space=feature_space,
        min_pos=min_pos,
        max_epochs=max_epochs,
        tol=tol,
    )


def train_all_classifiers(
    corpus: Corpus,
    neg_ratio: float = 1.0,
    reg_strength: float = 1.0,
    seed: int = 0,
    min_pos: int = 20,
    max_epochs: int = 200,
) -> list[LinearClassifier]:
    """One classifier per corpus category with enough positives."""
    space = NgramFeatureSpace.fit(r.text for r in corpus.reviews)
    classifiers = []
    for i, category in enumerate(corpus.categories):
        n_pos = sum(category in r.categories for r in corpus.reviews)
        if n_pos < min_pos:
            log.warning(
                "category %r: only %d positives, skipping", category, n_pos
            )
            continue
        classifiers.append(
            train_category_classifier(
                corpus,
                category,
                neg_ratio=neg_ratio,
                reg_strength=reg_strength,
                seed=seed + i,
                feature_space=space,
                min_pos=min_pos,
                max_epochs=max_epochs,
            )
        )
    return classifiers


@dataclass
class ControlLexicon:
    """Per-category ranked (n-gram, weight) lists; weights sum to 1."""

    entries: dict[str, list[tuple[str, float]]]

    def categories(self) -> list[str]:
        return sorted(self.entries)

    def weight(self, ngram: str, categories=None) -> float:
        """Best normalized weight of an n-gram across the given categories."""
        cats = self.categories() if categories is None else categories
        best = 0.0
        for cat in cats:
            for g, w in self.entries.get(cat, ()):
                if g == ngram:
                    best = max(best, w)
        return best

    def all_ngrams(self) -> list[str]:
        grams = set()
        for ranked in self.entries.values():
            grams.update(g for g, _ in ranked)
        return sorted(grams)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for cat in self.categories():
                for g, w in self.entries[cat]:
                    fh.write(f"{cat}\t{g}\t{w:.17g}\n")

    @classmethod
    def load(cls, path) -> "ControlLexicon":
        entries: dict[str, list[tuple[str, float]]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
                entries.setdefault(parts[0], []).append((parts[1], float(parts[2])))
        return cls(entries=entries)


def extract_lexicon(classifiers) -> ControlLexicon:
    """Keep strictly positive weights, rank them, L1-normalize per category."""
    entries: dict[str, list[tuple[str, float]]] = {}
    for clf in classifiers:
        names = clf.feature_space.index_to_feature
        positive = [
            (names[j], float(w)) for j, w in enumerate(clf.weights) if w > 0.0
        ]
        if not positive:
            log.warning("category %r: no positive weights, empty lexicon", clf.label)
            entries[clf.label] = []
            continue
        total = sum(w for _, w in positive)
        ranked = sorted(
            ((g, w / total) for g, w in positive), key=lambda t: (-t[1], t[0])
        )
        entries[clf.label] = ranked
    return ControlLexicon(entries=entries)


@dataclass
class AugmentedReview:
    """A review plus its serialized control prefix."""

    review: Review
    polarity: str
    category_tokens: tuple[str, ...]
    inferred: tuple[str, ...]  # lexicon n-grams, rank order

    @property
    def inferred_tokens(self) -> tuple[str, ...]:
        return tuple(ngram_token(g) for g in self.inferred)

    def prefix_tokens(self) -> list[str]:
        return [self.polarity, *self.category_tokens, *self.inferred_tokens, SEP]

    def serialize(self) -> str:
        """Prefix then body; fixed order so training files are bit-exact."""
        return " ".join([*self.prefix_tokens(), self.review.text.strip()])


def augment_review(
    review: Review,
    entity_categories,
    lexicon: ControlLexicon,
    max_tokens: int = 8,
) -> AugmentedReview:
    """Attach polarity, category and matching lexicon n-grams to a review.

    Candidates are the union of the entity's category lexicons, filtered
    to n-grams occurring in the review's word sequence and ranked by
    normalized weight across classifiers; the top ``max_tokens`` are kept.
    """
    cats = sorted(entity_categories)
    words = word_tokens(review.text)
    best: dict[str, float] = {}
    for cat in cats:
        for g, w in lexicon.entries.get(cat, ()):
            if ngram_in_words(g, words) and w > best.get(g, 0.0):
                best[g] = w
    ranked = sorted(best.items(), key=lambda t: (-t[1], t[0]))[:max_tokens]
    return AugmentedReview(
        review=review,
        polarity=polarity_token([review.rating]),
        category_tokens=tuple(category_token(c) for c in cats),
        inferred=tuple(g for g, _ in ranked),
    )


@dataclass
class ControlPrompt:
    """Decoder prompt: polarity, categories, and repeated inferred tokens."""

    polarity: str
    category_tokens: tuple[str, ...]
    inferred: tuple[str, ...]

    def tokens(self) -> list[str]:
        """Serialized prompt, separator included."""
        return [
            self.polarity,
            *self.category_tokens,
            *(ngram_token(g) for g in self.inferred),
            SEP,
        ]


def infer_prompt(
    augmented_inputs: list[AugmentedReview],
    lexicon: ControlLexicon,
    max_tokens: int = 8,
) -> ControlPrompt:
    """Prompt from the input side: the most repeated inferred tokens win.

    Ties break by higher lexicon weight, then lexicographically.  The
    polarity token is computed over the input ratings; category tokens
    come from the (shared) entity categories.
    """
    if not augmented_inputs:
        raise DataError("infer_prompt needs at least one augmented input")
    counts: Counter = Counter()
    for aug in augmented_inputs:
        counts.update(aug.inferred)
    ranked = sorted(
        counts.items(), key=lambda t: (-t[1], -lexicon.weight(t[0]), t[0])
    )[:max_tokens]
    return ControlPrompt(
        polarity=polarity_token([a.review.rating for a in augmented_inputs]),
        category_tokens=augmented_inputs[0].category_tokens,
        inferred=tuple(g for g, _ in ranked),
    )


def predict_categories(classifiers, review: Review, threshold: float = 0.0) -> set[str]:
    """Categories whose decision value clears the threshold."""
    return {
        clf.label for clf in classifiers if clf.decision_value(review) > threshold
    }


def control_token_inventory(categories, lexicon: ControlLexicon) -> list[str]:
    """Every control token the pipeline can emit, sorted; drives the vocab."""
    tokens = {_ctrl("pol", f"{b:.1f}") for b in POLARITY_BUCKETS}
    tokens.update(category_token(c) for c in categories)
    tokens.update(category_token(c) for c in lexicon.categories())
    tokens.update(ngram_token(g) for g in lexicon.all_ngrams())
    return sorted(tokens)
