"""Beam search against exhaustive and greedy oracles, repetition blocking,
token budgets and input selection for summarization."""

import itertools
import math

import numpy as np
import pytest

from opinsum.control import ControlLexicon, control_token_inventory
from opinsum.corpus import Corpus, Review
from opinsum.decoding import (
    DecodeConfig,
    beam_search,
    generate_with_prompt,
    length_penalty,
    make_step_fn,
    select_summary_inputs,
    summarize_entity,
)
from opinsum.errors import DataError
from opinsum.model import ModelConfig, MultiSourceTransformer
from opinsum.selfsup import cosine_sim, fit_tfidf
from opinsum.tokenizer import BOS_ID, EOS_ID, train_subword_vocab

EOS = 3  # rigged vocabularies put EOS at id 3


def markov_step_fn(table):
    """Next-token log-probs depend only on the last token."""

    def step(prefix_batch):
        return np.stack([table[p[-1]] for p in prefix_batch])

    return step


def random_table(rng, v=4):
    logits = rng.standard_normal((v, v)) * 2.0
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def enumerate_best(table, prompt, budget, alpha, eos=EOS):
    """Score every candidate continuation by brute force."""
    v = table.shape[1]
    hyps = []
    non_eos = [t for t in range(v) if t != eos]
    for k in range(1, budget + 1):
        # finished: k - 1 free tokens then EOS
        for body in itertools.product(non_eos, repeat=k - 1):
            seq = (*body, eos)
            score = 0.0
            last = prompt[-1]
            for t in seq:
                score += table[last][t]
                last = t
            hyps.append(((*prompt, *seq), score, score / length_penalty(k, alpha), True))
    for body in itertools.product(non_eos, repeat=budget):
        # unfinished: budget exhausted without EOS
        score = 0.0
        last = prompt[-1]
        for t in body:
            score += table[last][t]
            last = t
        hyps.append(
            ((*prompt, *body), score, score / length_penalty(budget, alpha), False)
        )
    hyps.sort(key=lambda h: (-h[2], h[0]))
    return hyps


class TestLengthPenalty:
    def test_pinned_value(self):
        assert length_penalty(13, 1.2) == pytest.approx(3.0**1.2, abs=1e-9)

    def test_alpha_zero_disables(self):
        for n in (1, 7, 40):
            assert length_penalty(n, 0.0) == 1.0

    def test_monotone_in_length(self):
        vals = [length_penalty(n, 1.2) for n in range(1, 30)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestBeamSearchExhaustive:
    def test_wide_beam_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for trial in range(8):
            table = random_table(rng)
            cfg = DecodeConfig(
                beam_size=100,
                alpha=1.2,
                max_new_tokens=4,
                block_repeated_trigrams=False,
                eos_id=EOS,
            )
            got = beam_search(markov_step_fn(table), [0], cfg)
            want = enumerate_best(table, (0,), 4, 1.2)
            for g, w in zip(got[:5], want[:5]):
                assert g.tokens == w[0]
                assert g.score == pytest.approx(w[1], abs=1e-9)
                assert g.normalized == pytest.approx(w[2], abs=1e-9)
                assert g.finished == w[3]

    def test_beam_one_equals_greedy(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            table = random_table(rng, v=6)
            cfg = DecodeConfig(
                beam_size=1,
                max_new_tokens=8,
                block_repeated_trigrams=False,
                eos_id=EOS,
            )
            got = beam_search(markov_step_fn(table), [2], cfg)[0]
            # oracle greedy walk with the lowest-id tie rule
            toks, last = [2], 2
            for _ in range(8):
                lp = table[last]
                t = int(np.flatnonzero(lp == lp.max()).min())
                toks.append(t)
                last = t
                if t == EOS:
                    break
            assert got.tokens == tuple(toks)

    def test_uniform_scores_pick_lexicographically_smallest(self):
        # with the beam wide enough to reach the EOS candidate in step
        # one, the shortest finished sequence wins on normalized score
        v = 5
        table = np.full((v, v), math.log(1.0 / v))
        cfg = DecodeConfig(beam_size=5, max_new_tokens=6, eos_id=EOS)
        got = beam_search(markov_step_fn(table), [0], cfg)
        assert got[0].tokens == (0, EOS)
        assert got[0].finished

    def test_narrow_beam_can_crowd_out_eos(self):
        # same uniform table, beam 3: ids 0..2 outrank the EOS candidate
        # lexicographically every step, so nothing finishes early
        v = 5
        table = np.full((v, v), math.log(1.0 / v))
        cfg = DecodeConfig(
            beam_size=3, max_new_tokens=4, block_repeated_trigrams=False, eos_id=EOS
        )
        got = beam_search(markov_step_fn(table), [0], cfg)
        assert all(len(h.tokens) == 5 and not h.finished for h in got)


class TestTrigramBlocking:
    def cycle_table(self, v=5, cycle=(0, 1, 2), eos=EOS, eos_lp=-30.0):
        """Strongly prefer the cycle successor of the last token."""
        table = np.full((v, v), -50.0)
        for i, t in enumerate(cycle):
            table[t, cycle[(i + 1) % len(cycle)]] = -0.001
        table[:, eos] = eos_lp
        return table

    def test_blocking_prevents_repeats(self):
        table = self.cycle_table()
        cfg = DecodeConfig(beam_size=2, max_new_tokens=40, eos_id=EOS)
        got = beam_search(markov_step_fn(table), [4], cfg)[0]
        gen = got.tokens[1:]
        body = [t for t in gen if t != EOS]
        trigrams = list(zip(body, body[1:], body[2:]))
        assert len(trigrams) == len(set(trigrams))

    def test_without_blocking_the_fixture_loops(self):
        table = self.cycle_table()
        cfg = DecodeConfig(
            beam_size=2, max_new_tokens=40, block_repeated_trigrams=False, eos_id=EOS
        )
        got = beam_search(markov_step_fn(table), [4], cfg)[0]
        body = [t for t in got.tokens[1:] if t != EOS]
        trigrams = list(zip(body, body[1:], body[2:]))
        assert len(trigrams) > len(set(trigrams))  # sanity: fixture does cycle

    def test_eos_always_available(self):
        # a two-cycle exhausts its fresh trigrams almost immediately; the
        # only unblocked continuation is EOS, which must stay legal
        table = self.cycle_table(cycle=(0, 1), eos_lp=-10.0)
        cfg = DecodeConfig(beam_size=1, max_new_tokens=30, eos_id=EOS)
        got = beam_search(markov_step_fn(table), [4], cfg)[0]
        assert got.finished and got.tokens[-1] == EOS
        assert len(got.tokens) < 12  # blocked long before the budget


class TestBudgetAndEdges:
    def test_generation_budget_respected(self):
        rng = np.random.default_rng(2)
        for budget in (1, 3, 7):
            table = random_table(rng)
            cfg = DecodeConfig(beam_size=4, max_new_tokens=budget, eos_id=EOS)
            for h in beam_search(markov_step_fn(table), [0, 1], cfg):
                assert len(h.tokens) - 2 <= budget

    def test_zero_budget_returns_prompt(self):
        table = random_table(np.random.default_rng(3))
        cfg = DecodeConfig(beam_size=4, max_new_tokens=0, eos_id=EOS)
        got = beam_search(markov_step_fn(table), [0, 2], cfg)
        assert len(got) == 1 and got[0].tokens == (0, 2) and not got[0].finished

    def test_empty_prompt_rejected(self):
        table = random_table(np.random.default_rng(4))
        with pytest.raises(DataError):
            beam_search(markov_step_fn(table), [], DecodeConfig())

    def test_bad_step_fn_shape_rejected(self):
        def bad_step(prefix_batch):
            return np.zeros((len(prefix_batch), 4, 2))

        with pytest.raises(DataError):
            beam_search(bad_step, [0], DecodeConfig(max_new_tokens=2))

    def test_config_validation(self):
        with pytest.raises(DataError):
            DecodeConfig(beam_size=0)
        with pytest.raises(DataError):
            DecodeConfig(max_new_tokens=-1)
        with pytest.raises(DataError):
            DecodeConfig(alpha=-0.1)
        with pytest.raises(DataError):
            DecodeConfig(selection="random")


def small_model_and_vocab():
    texts = [
        "the burgers were great and the fries were hot",
        "great fries but the burgers were cold",
        "hot fries great shakes and friendly staff",
    ]
    vocab = train_subword_vocab(texts, 72)
    cfg = ModelConfig(
        vocab_size=len(vocab.id_to_token),
        d_model=16,
        n_heads=2,
        n_layers=1,
        dropout=0.0,
        max_positions=64,
        sources=3,
    )
    model = MultiSourceTransformer(cfg, seed=0)
    return model, vocab, texts


class TestModelStepFn:
    def test_rows_are_normalized_log_probs(self):
        model, vocab, texts = small_model_and_vocab()
        sources = [[*vocab.encode(t), EOS_ID] for t in texts]
        from opinsum.model import pad_sources

        src, mask = pad_sources([sources])
        encoded = model.encode_sources(src, mask)
        step = make_step_fn(model, encoded)
        out = step([[BOS_ID, 5], [BOS_ID, 6]])
        assert out.shape == (2, len(vocab.id_to_token))
        np.testing.assert_allclose(
            np.exp(out).sum(axis=1), np.ones(2), atol=1e-9
        )

    def test_batched_rows_match_single_calls(self):
        model, vocab, texts = small_model_and_vocab()
        sources = [[*vocab.encode(t), EOS_ID] for t in texts]
        from opinsum.model import pad_sources

        src, mask = pad_sources([sources])
        encoded = model.encode_sources(src, mask)
        step = make_step_fn(model, encoded)
        single = step([[BOS_ID, 5]])[0]
        paired = step([[BOS_ID, 5], [BOS_ID, 6]])
        np.testing.assert_allclose(single, paired[0], atol=1e-6)
        assert not np.allclose(paired[0], paired[1])

    def test_generate_strips_prompt_and_eos(self):
        model, vocab, texts = small_model_and_vocab()
        sources = [[*vocab.encode(t), EOS_ID] for t in texts]
        cfg = DecodeConfig(beam_size=2, max_new_tokens=10)
        result = generate_with_prompt(model, vocab, sources, ["the"], cfg)
        assert EOS_ID not in result.token_ids
        assert len(result.token_ids) <= 10
        assert result.prompt_tokens == ["the"]
        assert isinstance(result.text, str)
        assert result.hypotheses[0].normalized == result.normalized_score


def entity_reviews():
    texts = [
        "great diner with great coffee",
        "the coffee was great at this diner",
        "great coffee and a friendly diner feel",
        "parking was a nightmare downtown",
        "totally unrelated gym review",
    ]
    return [
        Review(f"r{j}", "e0", t, 4, frozenset(["diner"])) for j, t in enumerate(texts)
    ]


class TestInputSelection:
    def test_central_order_matches_naive_ranking(self):
        reviews = entity_reviews()
        model = fit_tfidf(Corpus(reviews=tuple(reviews)))
        n = len(reviews)
        means = {
            r.review_id: sum(
                cosine_sim(model, r, o) for o in reviews if o.review_id != r.review_id
            )
            / (n - 1)
            for r in reviews
        }
        ranked = sorted(reviews, key=lambda r: (-means[r.review_id], r.review_id))
        cfg = DecodeConfig(n_inputs=3, selection="central")
        got = select_summary_inputs(reviews, cfg)
        assert sorted(r.review_id for r in got) == sorted(
            r.review_id for r in ranked[:3]
        )

    def test_by_id_takes_latest(self):
        cfg = DecodeConfig(n_inputs=2, selection="by_id")
        got = select_summary_inputs(entity_reviews(), cfg)
        assert [r.review_id for r in got] == ["r3", "r4"]

    def test_more_inputs_than_reviews_capped(self):
        cfg = DecodeConfig(n_inputs=50, selection="central")
        got = select_summary_inputs(entity_reviews(), cfg)
        assert len(got) == 5

    def test_outputs_sorted_by_id(self):
        cfg = DecodeConfig(n_inputs=4, selection="central")
        ids = [r.review_id for r in select_summary_inputs(entity_reviews(), cfg)]
        assert ids == sorted(ids)


class TestSummarizeEntity:
    def test_end_to_end_structure(self):
        reviews = entity_reviews()
        corpus = Corpus(reviews=tuple(reviews))
        vocab = train_subword_vocab((r.text for r in reviews), 96)
        lexicon = ControlLexicon(
            entries={"diner": [("great coffee", 0.6), ("diner", 0.4)]}
        )
        vocab.register_control_tokens(control_token_inventory(["diner"], lexicon))
        cfg = ModelConfig(
            vocab_size=len(vocab.id_to_token),
            d_model=16,
            n_heads=2,
            n_layers=1,
            dropout=0.0,
            max_positions=96,
            sources=4,
        )
        model = MultiSourceTransformer(cfg, seed=1)
        dcfg = DecodeConfig(beam_size=2, max_new_tokens=12, n_inputs=4)
        result = summarize_entity(model, vocab, lexicon, corpus, "e0", dcfg)
        assert result.entity_id == "e0"
        assert len(result.input_review_ids) == 4
        assert result.prompt_tokens[0].startswith("⟨pol_")
        assert result.prompt_tokens[1] == "⟨cat_diner⟩"
        assert result.prompt_tokens[-1] == "⟨sep⟩"
        assert result.normalized_score <= 0.0
