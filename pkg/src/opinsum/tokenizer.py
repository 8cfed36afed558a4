"""Subword vocabulary (iterative pair merges) and word-level n-gram features.

Two tokenizations live here on purpose:

* a trained subword vocabulary for the neural model, built by greedy
  pair merging over whitespace-pretokenized words with an end-of-word
  marker, with reserved ids for padding/BOS/EOS/UNK and the control
  marker;
* a lowercased, punctuation-stripped word tokenizer that feeds the
  classifier features (unigrams + bigrams) and tf-idf vectors.

Control tokens (polarity, category and aspect n-gram markers) are
registered as atomic entries: the subword merges never split them, so
a control token is always exactly one id.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

# Reserved ids, fixed for every trained vocabulary.
PAD_ID, BOS_ID, EOS_ID, UNK_ID, SEP_ID = 0, 1, 2, 3, 4
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
# The control marker doubles as the prompt/body separator token; control
# tokens are wrapped in the same angle brackets.
CTRL_OPEN, CTRL_CLOSE = "\u27e8", "\u27e9"
SEP = CTRL_OPEN + "sep" + CTRL_CLOSE
RESERVED = (PAD, BOS, EOS, UNK, SEP)

END_OF_WORD = "</w>"

VOCAB_FORMAT_VERSION = 1


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(word: str) -> str:
    start, end = 0, len(word)
    while start < end and _is_punct(word[start]):
        start += 1
    while end > start and _is_punct(word[end - 1]):
        end -= 1
    return word[start:end]


def word_tokens(text: str) -> list[str]:
    """Lowercased words, split on whitespace, edge punctuation stripped."""
    out = []
    for raw in text.lower().split():
        w = _strip_punct(raw)
        if w:
            out.append(w)
    return out


def extract_ngrams(text: str) -> Counter:
    """Multiset of word unigrams and adjacent bigrams ("w1 w2" keys)."""
    words = word_tokens(text)
    grams: Counter = Counter(words)
    for a, b in zip(words, words[1:]):
        grams[f"{a} {b}"] += 1
    return grams


def ngram_in_words(ngram: str, words: list[str]) -> bool:
    """True when a unigram/bigram feature occurs in a word sequence."""
    parts = ngram.split(" ")
    if len(parts) == 1:
        return parts[0] in words
    n = len(parts)
    return any(words[i : i + n] == parts for i in range(len(words) - n + 1))


@dataclass
class NgramFeatureSpace:
    """Dense indexing of the unigram/bigram features seen in a corpus."""

    feature_to_index: dict[str, int]
    document_frequency: list[int]

    @classmethod
    def fit(cls, texts, unigrams_only: bool = False) -> "NgramFeatureSpace":
        df: Counter = Counter()
        for text in texts:
            grams = Counter(word_tokens(text)) if unigrams_only else extract_ngrams(text)
            df.update(grams.keys())
        if not df:
            raise DataError("no features in text collection")
        features = sorted(df)
        return cls(
            feature_to_index={f: i for i, f in enumerate(features)},
            document_frequency=[df[f] for f in features],
        )

    def __len__(self) -> int:
        return len(self.feature_to_index)

    @property
    def index_to_feature(self) -> list[str]:
        if not hasattr(self, "_inv"):
            inv = [""] * len(self.feature_to_index)
            for f, i in self.feature_to_index.items():
                inv[i] = f
            self._inv = inv
        return self._inv

    def counts(self, text: str, unigrams_only: bool = False) -> dict[int, float]:
        """Sparse count vector of a text in this feature space."""
        grams = Counter(word_tokens(text)) if unigrams_only else extract_ngrams(text)
        out: dict[int, float] = {}
        for g, c in grams.items():
            j = self.feature_to_index.get(g)
            if j is not None:
                out[j] = float(c)
        return out


def _pair_counts(word_freqs: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for symbols, freq in word_freqs.items():
        for pair in zip(symbols, symbols[1:]):
            counts[pair] += freq
    return counts


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    merged = []
    i = 0
    a, b = pair
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            merged.append(a + b)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


@dataclass
class SubwordVocab:
    """Trained subword vocabulary with atomic control tokens."""

    merges: list[tuple[str, str]]
    alphabet: list[str]
    control_tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._rebuild_tables()

    def _rebuild_tables(self):
        tokens = list(RESERVED) + list(self.alphabet)
        for a, b in self.merges:
            tokens.append(a + b)
        tokens.extend(self.control_tokens)
        self.id_to_token = tokens
        self.token_to_id = {}
        for i, t in enumerate(tokens):
            if t in self.token_to_id:
                raise DataError(f"vocabulary collision on token {t!r}")
            self.token_to_id[t] = i
        self._control_set = set(self.control_tokens) | {SEP}
        self._merge_rank = {pair: i for i, pair in enumerate(self.merges)}
        self._word_cache: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def register_control_tokens(self, tokens) -> None:
        """Append atomic control tokens (sorted, deduplicated) to the table."""
        fresh = sorted(set(tokens) - set(self.control_tokens) - set(RESERVED))
        for t in fresh:
            if not (t.startswith(CTRL_OPEN) and t.endswith(CTRL_CLOSE)):
                raise DataError(f"control token {t!r} lacks the marker brackets")
        if fresh:
            self.control_tokens = list(self.control_tokens) + fresh
            self._rebuild_tables()

    def is_control_id(self, token_id: int) -> bool:
        return self.id_to_token[token_id] in self._control_set

    def _encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word) + [END_OF_WORD]
        while len(symbols) > 1:
            best_rank, best_i = None, None
            for i, pair in enumerate(zip(symbols, symbols[1:])):
                rank = self._merge_rank.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_i = rank, i
            if best_rank is None:
                break
            symbols[best_i : best_i + 2] = [symbols[best_i] + symbols[best_i + 1]]
        ids = tuple(self.token_to_id.get(s, UNK_ID) for s in symbols)
        self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        """Token ids for a text; registered control words stay atomic."""
        ids: list[int] = []
        for word in text.split():
            if word in self._control_set:
                ids.append(self.token_to_id[word])
            else:
                ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids) -> str:
        """Inverse of encode up to whitespace normalization."""
        words: list[str] = []
        current: list[str] = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise DataError(f"token id {i} out of range [0, {len(self.id_to_token)})")
            if i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            tok = self.id_to_token[i]
            if i == UNK_ID:
                current.append(UNK)
                continue
            if tok in self._control_set:
                if current:
                    words.append("".join(current))
                    current = []
                words.append(tok)
                continue
            if tok.endswith(END_OF_WORD):
                current.append(tok[: -len(END_OF_WORD)])
                words.append("".join(current))
                current = []
            else:
                current.append(tok)
        if current:
            words.append("".join(current))
        return " ".join(w for w in words if w)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for t in self.id_to_token:
            h.update(t.encode("utf-8") + b"\x00")
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"opinsum-vocab\t{VOCAB_FORMAT_VERSION}\t{len(self.alphabet)}"
                f"\t{len(self.merges)}\t{len(self.control_tokens)}\n"
            )
            fh.write("\t".join(RESERVED) + "\n")
            for sym in self.alphabet:
                fh.write(f"A\t{_escape(sym)}\n")
            for a, b in self.merges:
                fh.write(f"M\t{_escape(a)}\t{_escape(b)}\n")
            for t in self.control_tokens:
                fh.write(f"C\t{_escape(t)}\n")

    @classmethod
    def load(cls, path) -> "SubwordVocab":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 5 or header[0] != "opinsum-vocab":
                raise DataError(f"{path}: not a vocab file")
            if int(header[1]) != VOCAB_FORMAT_VERSION:
                raise DataError(f"{path}: unsupported vocab version {header[1]}")
            n_alpha, n_merges, n_ctrl = (int(x) for x in header[2:5])
            reserved = tuple(fh.readline().rstrip("\n").split("\t"))
            if reserved != RESERVED:
                raise DataError(f"{path}: reserved token mismatch")
            alphabet, merges, ctrl = [], [], []
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if parts[0] == "A":
                    alphabet.append(_unescape(parts[1]))
                elif parts[0] == "M":
                    merges.append((_unescape(parts[1]), _unescape(parts[2])))
                elif parts[0] == "C":
                    ctrl.append(_unescape(parts[1]))
                else:
                    raise DataError(f"{path}: bad record {parts[0]!r}")
        if (len(alphabet), len(merges), len(ctrl)) != (n_alpha, n_merges, n_ctrl):
            raise DataError(f"{path}: header counts disagree with body")
        return cls(merges=merges, alphabet=alphabet, control_tokens=ctrl)


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(s[i + 1], s[i + 1]))
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def train_subword_vocab(texts, vocab_size: int) -> SubwordVocab:
    """Greedy pair-merge training; ties broken by lexicographic pair order.

    The base alphabet is the character set of the training texts plus the
    end-of-word marker; merges continue until the budget implied by
    ``vocab_size`` is used or no pair occurs at least twice.
    """
    word_freqs: dict[tuple[str, ...], int] = {}
    charset: set[str] = set()
    n_words = 0
    for text in texts:
        for word in text.split():
            n_words += 1
            charset.update(word)
            key = tuple(word) + (END_OF_WORD,)
            word_freqs[key] = word_freqs.get(key, 0) + 1
    if n_words == 0:
        raise DataError("empty text collection")

    alphabet = sorted(charset) + [END_OF_WORD]
    floor = len(RESERVED) + len(alphabet)
    if vocab_size < floor:
        raise DataError(
            f"vocab_size {vocab_size} below reserved+alphabet floor {floor}"
        )

    merges: list[tuple[str, str]] = []
    budget = vocab_size - floor
    while len(merges) < budget:
        counts = _pair_counts(word_freqs)
        if not counts:
            break
        best_pair = min(counts, key=lambda p: (-counts[p], p))
        if counts[best_pair] < 2:
            break
        merges.append(best_pair)
        word_freqs = {
            _merge_word(sym, best_pair): freq for sym, freq in word_freqs.items()
        }
    return SubwordVocab(merges=merges, alphabet=alphabet)
