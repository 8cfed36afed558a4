"""Constrained beam decoding over a forced control prompt.

The search itself only needs a ``step_fn(prefix_batch) -> (B, V)``
array of next-token log-probabilities, so it can run against the real
model or against a rigged distribution in tests.  Hypotheses are ranked
by total log-probability divided by the length penalty
``((5 + n) / 6) ** alpha`` over the generated region; repeated trigram
candidates are masked out during expansion (end-of-sequence is exempt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .control import ControlLexicon, augment_review, infer_prompt
from .corpus import Corpus
from .errors import DataError
from .model import EncodedSources, MultiSourceTransformer, pad_sources
from .selfsup import cosine_sim, fit_tfidf
from .tokenizer import BOS_ID, EOS_ID, SubwordVocab


def length_penalty(n_tokens: int, alpha: float = 1.2) -> float:
    return ((5.0 + n_tokens) / 6.0) ** alpha


@dataclass
class DecodeConfig:
    beam_size: int = 5
    alpha: float = 1.2
    max_new_tokens: int = 60  # token budget for the generated region
    block_repeated_trigrams: bool = True
    eos_id: int = EOS_ID
    n_inputs: int = 8
    selection: str = "central"  # central | by_id input picking
    max_source_len: int = 96
    max_control_tokens: int = 8

    def __post_init__(self):
        if self.beam_size < 1:
            raise DataError("beam_size must be at least 1")
        if self.max_new_tokens < 0:
            raise DataError("max_new_tokens must be non-negative")
        if self.alpha < 0:
            raise DataError("alpha must be non-negative")
        if self.selection not in ("central", "by_id"):
            raise DataError(f"unknown selection {self.selection!r}")


@dataclass
class Hypothesis:
    tokens: tuple  # prompt + generated, EOS included when finished
    score: float  # sum of chosen log-probabilities
    normalized: float  # score / length_penalty(generated length)
    finished: bool


def _finish(tokens, score, prompt_len, alpha, finished) -> Hypothesis:
    gen = max(len(tokens) - prompt_len, 1)
    return Hypothesis(
        tokens=tokens,
        score=score,
        normalized=score / length_penalty(gen, alpha),
        finished=finished,
    )


def beam_search(step_fn, prompt_ids, cfg: DecodeConfig) -> list:
    """Ranked hypotheses continuing a forced prompt.

    Ties in score break toward the lexicographically smaller token
    sequence, so the search is fully deterministic.
    """
    prompt = tuple(int(t) for t in prompt_ids)
    if not prompt:
        raise DataError("beam_search needs a non-empty prompt")
    p = len(prompt)
    if cfg.max_new_tokens == 0:
        return [Hypothesis(tokens=prompt, score=0.0, normalized=0.0, finished=False)]

    live = [(prompt, 0.0, frozenset())]  # tokens, score, generated trigrams
    finished: list = []
    for _ in range(cfg.max_new_tokens):
        logprobs = np.asarray(step_fn([list(t) for t, _, _ in live]), dtype=np.float64)
        if logprobs.shape[0] != len(live) or logprobs.ndim != 2:
            raise DataError(
                f"step_fn returned shape {logprobs.shape}, wanted ({len(live)}, V)"
            )
        candidates = []  # (total, tokens, parent_index, token)
        width = min(2 * cfg.beam_size, logprobs.shape[1])
        for bi, (toks, score, tris) in enumerate(live):
            lp = logprobs[bi]
            if cfg.block_repeated_trigrams and len(toks) - p >= 2:
                a, b = toks[-2], toks[-1]
                blocked = [z for (x, y, z) in tris if (x, y) == (a, b) and z != cfg.eos_id]
                if blocked:
                    lp = lp.copy()
                    lp[blocked] = -np.inf
            # full sort keeps the lowest-id-wins tie rule exact
            order = np.lexsort((np.arange(lp.shape[0]), -lp))[:width]
            for t in order:
                total = score + lp[t]
                if math.isinf(total) and total < 0:
                    continue
                candidates.append((total, toks + (int(t),), bi, int(t)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        new_live = []
        for total, toks, bi, t in candidates:
            if t == cfg.eos_id:
                finished.append(_finish(toks, total, p, cfg.alpha, True))
            else:
                _, _, tris = live[bi]
                if len(toks) - p >= 3:
                    tris = tris | {tuple(toks[-3:])}
                new_live.append((toks, total, tris))
            if len(new_live) == cfg.beam_size:
                break
        live = new_live
        if not live or len(finished) >= cfg.beam_size:
            break
    for toks, score, _ in live:
        finished.append(_finish(toks, score, p, cfg.alpha, False))
    if not finished:
        raise DataError("beam search produced no hypotheses")
    finished.sort(key=lambda h: (-h.normalized, h.tokens))
    return finished


def make_step_fn(model: MultiSourceTransformer, encoded: EncodedSources):
    """Next-token log-probabilities from a single encoded example.

    The encoder ran once (batch of one); each call broadcasts its states
    across however many hypotheses the search currently carries.
    """
    states = encoded.states.data
    mask = encoded.mask

    def step_fn(prefix_batch):
        b = len(prefix_batch)
        enc = EncodedSources(
            states=Tensor(np.broadcast_to(states, (b, *states.shape[1:]))),
            mask=np.broadcast_to(mask, (b, *mask.shape[1:])),
        )
        ids = np.asarray(prefix_batch, dtype=np.int64)
        with no_grad():
            logits = model.decoder_forward(enc, ids).data[:, -1, :].astype(np.float64)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    return step_fn


@dataclass
class SummaryResult:
    entity_id: str
    text: str
    prompt_tokens: list
    input_review_ids: list
    token_ids: tuple  # generated region, prompt stripped, EOS dropped
    score: float
    normalized_score: float
    hypotheses: list = field(default_factory=list, repr=False)


def generate_with_prompt(
    model: MultiSourceTransformer,
    vocab: SubwordVocab,
    source_ids: list,
    prompt_tokens: list,
    cfg: DecodeConfig,
) -> SummaryResult:
    """Decode a summary for pre-encoded sources under a forced prompt."""
    if not source_ids:
        raise DataError("generate_with_prompt needs at least one source")
    prompt_ids = [BOS_ID, *vocab.encode(" ".join(prompt_tokens))]
    src, src_mask = pad_sources([[list(s) for s in source_ids]])
    with no_grad():
        encoded = model.encode_sources(src, src_mask)
    hyps = beam_search(make_step_fn(model, encoded), prompt_ids, cfg)
    best = hyps[0]
    gen = best.tokens[len(prompt_ids) :]
    if gen and gen[-1] == cfg.eos_id:
        gen = gen[:-1]
    return SummaryResult(
        entity_id="",
        text=vocab.decode(gen),
        prompt_tokens=list(prompt_tokens),
        input_review_ids=[],
        token_ids=tuple(gen),
        score=best.score,
        normalized_score=best.normalized,
        hypotheses=hyps,
    )


def _central_order(reviews: list) -> list:
    """Reviews by descending mean pairwise tf-idf similarity, id tie-break."""
    if len(reviews) == 1:
        return list(reviews)
    tfidf = fit_tfidf(Corpus(reviews=tuple(reviews)))
    n = len(reviews)
    means = []
    for i in range(n):
        s = sum(cosine_sim(tfidf, reviews[i], reviews[j]) for j in range(n) if j != i)
        means.append(s / (n - 1))
    order = sorted(range(n), key=lambda i: (-means[i], reviews[i].review_id))
    return [reviews[i] for i in order]


def select_summary_inputs(reviews: list, cfg: DecodeConfig) -> list:
    """Pick the m inputs to summarize, centrality-first or by latest id."""
    m = min(cfg.n_inputs, len(reviews))
    if m < 1:
        raise DataError("no reviews to summarize")
    if cfg.selection == "central":
        chosen = _central_order(reviews)[:m]
    else:
        chosen = sorted(reviews, key=lambda r: r.review_id)[-m:]
    return sorted(chosen, key=lambda r: r.review_id)


def summarize_entity(
    model: MultiSourceTransformer,
    vocab: SubwordVocab,
    lexicon: ControlLexicon,
    corpus: Corpus,
    entity_id: str,
    cfg: DecodeConfig,
) -> SummaryResult:
    """End-to-end summary of one entity: pick inputs, infer the control
    prompt from them, encode, and beam-decode."""
    reviews = corpus.entity_reviews(entity_id)
    chosen = select_summary_inputs(reviews, cfg)
    cats = frozenset().union(*(r.categories for r in reviews))
    augs = [
        augment_review(r, cats, lexicon, max_tokens=cfg.max_control_tokens)
        for r in chosen
    ]
    prompt = infer_prompt(augs, lexicon, max_tokens=cfg.max_control_tokens)
    sources = [
        [*vocab.encode(r.text)[: cfg.max_source_len - 1], EOS_ID] for r in chosen
    ]
    result = generate_with_prompt(model, vocab, sources, prompt.tokens(), cfg)
    result.entity_id = entity_id
    result.input_review_ids = [r.review_id for r in chosen]
    return result
