"""Word normalization, n-gram features and the subword vocabulary."""

from collections import Counter

import numpy as np
import pytest

from opinsum.errors import DataError
from opinsum.tokenizer import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SEP,
    SEP_ID,
    UNK,
    UNK_ID,
    NgramFeatureSpace,
    SubwordVocab,
    extract_ngrams,
    ngram_in_words,
    train_subword_vocab,
    word_tokens,
)

WORDS = ["burger", "fries", "shake", "salty", "sweet", "cold", "warm", "stale"]


def random_texts(rng, n, max_len=9):
    texts = []
    for _ in range(n):
        k = int(rng.integers(1, max_len))
        texts.append(" ".join(rng.choice(WORDS, size=k)))
    return texts


class TestWordTokens:
    def test_lowercase_and_split(self):
        assert word_tokens("Great Burgers  HERE") == ["great", "burgers", "here"]

    def test_edge_punctuation_stripped_inner_kept(self):
        assert word_tokens("(good!) don't, stop...") == ["good", "don't", "stop"]

    def test_unicode_punctuation(self):
        assert word_tokens("“nice” — place…") == ["nice", "place"]

    def test_pure_punctuation_dropped(self):
        assert word_tokens("!!! ... ---") == []


class TestNgrams:
    def test_unigrams_and_bigrams_counted(self):
        grams = extract_ngrams("hot dog hot dog")
        assert grams["hot"] == 2 and grams["dog"] == 2
        assert grams["hot dog"] == 2 and grams["dog hot"] == 1

    def test_ngram_in_words_requires_adjacency(self):
        words = ["cheap", "but", "tasty"]
        assert ngram_in_words("cheap but", words)
        assert not ngram_in_words("cheap tasty", words)
        assert ngram_in_words("tasty", words)

    def test_feature_space_counts_match_counter(self):
        texts = ["good food good mood", "bad food"]
        space = NgramFeatureSpace.fit(texts)
        inv = space.index_to_feature
        counted = space.counts(texts[0])
        expected = extract_ngrams(texts[0])
        assert {inv[j]: c for j, c in counted.items()} == {
            g: float(c) for g, c in expected.items()
        }
        # document frequency counts documents, not occurrences
        assert space.document_frequency[space.feature_to_index["food"]] == 2
        assert space.document_frequency[space.feature_to_index["good"]] == 1


class TestVocabTraining:
    def test_first_merge_is_most_frequent_pair(self):
        # oracle: recount symbol pairs by hand on the raw words
        texts = ["aaab aaab", "abab"]
        counts = Counter()
        for text in texts:
            for word in text.split():
                symbols = list(word) + ["</w>"]
                counts.update(zip(symbols, symbols[1:]))
        best = min(counts, key=lambda p: (-counts[p], p))
        vocab = train_subword_vocab(texts, vocab_size=16)
        assert vocab.merges[0] == best

    def test_merges_stop_below_pair_frequency_two(self):
        vocab = train_subword_vocab(["ab cd ef"], vocab_size=200)
        assert vocab.merges == []

    def test_vocab_size_budget_respected(self):
        rng = np.random.default_rng(11)
        texts = random_texts(rng, 60)
        vocab = train_subword_vocab(texts, vocab_size=80)
        assert len(vocab) <= 80

    def test_too_small_budget_rejected(self):
        with pytest.raises(DataError):
            train_subword_vocab(["abcdefghij"], vocab_size=8)

    def test_training_deterministic(self):
        rng = np.random.default_rng(3)
        texts = random_texts(rng, 40)
        a = train_subword_vocab(texts, 96)
        b = train_subword_vocab(texts, 96)
        assert a.merges == b.merges and a.alphabet == b.alphabet

    def test_empty_collection_rejected(self):
        with pytest.raises(DataError):
            train_subword_vocab([], 64)


class TestEncodeDecode:
    def test_round_trip_on_training_texts(self):
        rng = np.random.default_rng(5)
        texts = random_texts(rng, 80)
        vocab = train_subword_vocab(texts, 120)
        for t in texts:
            assert vocab.decode(vocab.encode(t)) == " ".join(t.split())

    def test_unknown_characters_become_unk(self):
        vocab = train_subword_vocab(["plain words only"], 64)
        ids = vocab.encode("plain über")
        assert UNK_ID in ids
        assert UNK in vocab.decode(ids)

    def test_reserved_ids_are_stable(self):
        vocab = train_subword_vocab(["x y"], 16)
        assert vocab.id_to_token[PAD_ID] == "<pad>"
        assert vocab.id_to_token[BOS_ID] == "<bos>"
        assert vocab.id_to_token[EOS_ID] == "<eos>"
        assert vocab.id_to_token[UNK_ID] == "<unk>"
        assert vocab.id_to_token[SEP_ID] == SEP

    def test_specials_dropped_on_decode(self):
        vocab = train_subword_vocab(["x y"], 16)
        ids = [BOS_ID, *vocab.encode("x y"), EOS_ID, PAD_ID, PAD_ID]
        assert vocab.decode(ids) == "x y"

    def test_out_of_range_id_rejected(self):
        vocab = train_subword_vocab(["x y"], 16)
        with pytest.raises(DataError):
            vocab.decode([len(vocab)])


class TestControlTokens:
    def test_registered_tokens_encode_atomically(self):
        vocab = train_subword_vocab(["tasty cheap tasty"], 64)
        vocab.register_control_tokens(["⟨pol_4.5⟩", "⟨cat_diner⟩"])
        tid = vocab.token_to_id["⟨pol_4.5⟩"]
        ids = vocab.encode("⟨pol_4.5⟩ ⟨cat_diner⟩ tasty")
        assert ids[0] == tid
        assert vocab.is_control_id(ids[0]) and vocab.is_control_id(ids[1])
        assert vocab.decode(ids).startswith("⟨pol_4.5⟩ ⟨cat_diner⟩ ")

    def test_registration_sorted_and_idempotent(self):
        vocab = train_subword_vocab(["a b"], 16)
        vocab.register_control_tokens(["⟨ng_b⟩", "⟨ng_a⟩"])
        first = list(vocab.id_to_token)
        vocab.register_control_tokens(["⟨ng_a⟩"])
        assert vocab.id_to_token == first
        assert vocab.control_tokens == ["⟨ng_a⟩", "⟨ng_b⟩"]

    def test_unbracketed_token_rejected(self):
        vocab = train_subword_vocab(["a b"], 16)
        with pytest.raises(DataError):
            vocab.register_control_tokens(["pol_4.5"])

    def test_separator_is_control_without_registration(self):
        vocab = train_subword_vocab(["a b"], 16)
        assert vocab.encode(SEP) == [SEP_ID]
        assert vocab.is_control_id(SEP_ID)


class TestPersistence:
    def test_save_load_identity(self, tmp_path):
        rng = np.random.default_rng(9)
        vocab = train_subword_vocab(random_texts(rng, 50), 100)
        vocab.register_control_tokens(["⟨pol_1.0⟩", "⟨ng_salty⟩"])
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        loaded = SubwordVocab.load(path)
        assert loaded.id_to_token == vocab.id_to_token
        assert loaded.merges == vocab.merges
        assert loaded.content_hash() == vocab.content_hash()

    def test_content_hash_tracks_table(self):
        vocab = train_subword_vocab(["a b"], 16)
        before = vocab.content_hash()
        vocab.register_control_tokens(["⟨ng_a⟩"])
        assert vocab.content_hash() != before

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "vocab.tsv"
        path.write_text("wrong-magic\t1\t0\t0\t0\n")
        with pytest.raises(DataError):
            SubwordVocab.load(path)
