"""Corpus ingestion: tokenization, vocabulary building, train/test splitting.

Sentences are whitespace-tokenized, with capitalized words rewritten as a
marker token followed by the lowercase form (so typing cost counts the
"shift" keystroke), and optionally with trailing sentence punctuation
detached into its own token.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MARKER = "<shift>"
PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS, MARKER)
TRAILING_PUNCT = ".,!?"

VOCAB_HEADER = "# kwac-vocab v1"


class CorpusError(ValueError):
    """Invalid corpus input or configuration."""


class EmptySentenceError(CorpusError):
    """Raised when a line is empty after whitespace trimming."""


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence; ids are filled in once a vocabulary exists."""

    tokens: tuple[str, ...]
    ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise EmptySentenceError("sentence has no tokens")
        if any(t == "" for t in self.tokens):
            raise CorpusError("empty token in sentence")
        if self.ids is not None and len(self.ids) != len(self.tokens):
            raise CorpusError("ids length does not match tokens length")

    def __len__(self):
        return len(self.tokens)

    @property
    def surface(self) -> str:
        return detokenize(self.tokens)


@dataclass(frozen=True)
class CorpusConfig:
    max_sentence_length: int = 16
    vocab_size: int = 2000
    min_freq: int = 1
    split_punct: bool = True
    marker: str = MARKER
    seed: int = 0
    test_fraction: float = 0.1
    train_size: int | None = None
    test_size: int | None = None


def tokenize(raw_line: str, marker: str = MARKER, split_punct: bool = True) -> Sentence:
    """Tokenize one raw line into a Sentence (ids unassigned).

    Whitespace split; trailing sentence punctuation (``.,!?``) is detached
    into separate tokens when ``split_punct`` is set; any word starting with
    an uppercase letter becomes ``(marker, lowercased word)``.
    """
    words = raw_line.strip().split()
    if not words:
        raise EmptySentenceError("empty sentence after trimming")
    tokens: list[str] = []
    for word in words:
        trailing: list[str] = []
        if split_punct:
            while len(word) > 1 and word[-1] in TRAILING_PUNCT:
                trailing.append(word[-1])
                word = word[:-1]
        if word[0].isupper():
            tokens.append(marker)
            tokens.append(word.lower())
        else:
            tokens.append(word)
        tokens.extend(reversed(trailing))
    return Sentence(tokens=tuple(tokens))


def detokenize(tokens, marker: str = MARKER) -> str:
    """Rejoin tokens into a surface string, restoring capitalization.

    A marker token capitalizes the following token; punctuation tokens
    attach to the preceding word without a space. A dangling marker at the
    end of the sequence is dropped.
    """
    out: list[str] = []
    capitalize_next = False
    for tok in tokens:
        if tok == marker:
            capitalize_next = True
            continue
        if capitalize_next:
            tok = tok[0].upper() + tok[1:]
            capitalize_next = False
        if tok in tuple(TRAILING_PUNCT) and out:
            out[-1] += tok
        else:
            out.append(tok)
    return " ".join(out)


class Vocabulary:
    """Bijective token<->index map with fixed reserved entries.

    Reserved indices: pad=0, unk=1, bos=2, eos=3, marker=4.
    """

    def __init__(self, tokens: list[str], marker: str = MARKER):
        self.marker = marker
        reserved = (PAD, UNK, BOS, EOS, marker)
        self.itos: list[str] = list(reserved) + [t for t in tokens if t not in reserved]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")

    pad_id, unk_id, bos_id, eos_id, marker_id = 0, 1, 2, 3, 4
    n_reserved = 5

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str):
        return token in self.stoi

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.itos[idx]

    def index(self, sentence: Sentence) -> Sentence:
        return replace(sentence, ids=tuple(self.id_of(t) for t in sentence.tokens))

    def serialize(self) -> str:
        lines = [VOCAB_HEADER]
        lines += [f"{t}\t{i}" for i, t in enumerate(self.itos)]
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_HEADER:
            raise CorpusError(f"bad vocabulary header: {lines[:1]}")
        itos: list[str] = []
        for line in lines[1:]:
            if not line:
                continue
            tok, idx = line.split("\t")
            if int(idx) != len(itos):
                raise CorpusError("non-contiguous vocabulary indices")
            itos.append(tok)
        vocab = cls.__new__(cls)
        vocab.marker = itos[4]
        vocab.itos = itos
        vocab.stoi = {t: i for i, t in enumerate(itos)}
        return vocab

    def save(self, path):
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.deserialize(Path(path).read_text(encoding="utf-8"))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()[:16]


def build_vocabulary(
    sentences: list[Sentence],
    max_size: int | None = None,
    min_freq: int = 1,
    marker: str = MARKER,
) -> Vocabulary:
    """Build a frequency-ranked vocabulary (ties broken lexicographically).

    ``max_size`` caps the number of non-reserved entries; everything below
    the cap or ``min_freq`` maps to the unknown index.
    """
    if not sentences:
        raise CorpusError("cannot build vocabulary from empty corpus")
    if max_size is not None and max_size < Vocabulary.n_reserved:
        raise CorpusError(
            f"max_size={max_size} is smaller than the reserved-token count "
            f"({Vocabulary.n_reserved})"
        )
    reserved = {PAD, UNK, BOS, EOS, marker}
    counts = Counter(t for s in sentences for t in s.tokens if t not in reserved)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, c in ranked if c >= min_freq]
    if max_size is not None:
        kept = kept[:max_size]
    return Vocabulary(kept, marker=marker)


@dataclass
class CorpusSplit:
    """Disjoint train/test sentence sets plus the vocabulary built on train."""

    train: list[Sentence]
    test: list[Sentence]
    vocab: Vocabulary
    config: CorpusConfig
    fingerprint: str = field(default="")

    def __post_init__(self):
        if not self.fingerprint:
            h = hashlib.sha256()
            h.update(repr((self.config.max_sentence_length, self.config.seed)).encode())
            h.update(self.vocab.fingerprint.encode())
            for s in self.train + self.test:
                h.update(("\x1f".join(s.tokens) + "\n").encode("utf-8"))
            self.fingerprint = h.hexdigest()[:16]


def split_sentences(
    sentences: list[Sentence], config: CorpusConfig
) -> tuple[list[Sentence], list[Sentence]]:
    """Shuffle (seeded), deduplicate by surface string, and split."""
    seen: set[str] = set()
    unique: list[Sentence] = []
    for s in sentences:
        key = " ".join(s.tokens)
        if key not in seen:
            seen.add(key)
            unique.append(s)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(unique))
    shuffled = [unique[i] for i in order]
    if config.test_size is not None:
        n_test = config.test_size
        n_train = config.train_size if config.train_size is not None else len(shuffled) - n_test
    else:
        n_test = max(1, int(round(len(shuffled) * config.test_fraction)))
        n_train = len(shuffled) - n_test
    if n_train + n_test > len(shuffled):
        raise CorpusError(
            f"requested split {n_train}/{n_test} but only {len(shuffled)} usable sentences"
        )
    return shuffled[n_test : n_test + n_train], shuffled[:n_test]


def load_split(path, config: CorpusConfig | None = None) -> CorpusSplit:
    """Load a one-sentence-per-line UTF-8 file into an indexed CorpusSplit."""
    config = config or CorpusConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    return make_split(text.splitlines(), config)


def make_split(lines: list[str], config: CorpusConfig) -> CorpusSplit:
    sentences = []
    for line in lines:
        if not line.strip():
            continue
        s = tokenize(line, marker=config.marker, split_punct=config.split_punct)
        if len(s) <= config.max_sentence_length:
            sentences.append(s)
    if not sentences:
        raise CorpusError("no usable sentences after filtering")
    train, test = split_sentences(sentences, config)
    vocab = build_vocabulary(
        train, max_size=config.vocab_size, min_freq=config.min_freq, marker=config.marker
    )
    train = [vocab.index(s) for s in train]
    test = [vocab.index(s) for s in test]
    return CorpusSplit(train=train, test=test, vocab=vocab, config=config)
