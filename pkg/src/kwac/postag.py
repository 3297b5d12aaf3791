"""A small pluggable part-of-speech tagger.

The default implementation is a lexicon lookup over nine coarse categories
(determiner, conjunction, pronoun, interjection, verb, preposition, adverb,
adjective, noun) with a light suffix fallback and an "other" bucket, so the
evaluation never depends on an external model.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TAGS = (
    "determiner",
    "conjunction",
    "pronoun",
    "interjection",
    "verb",
    "preposition",
    "adverb",
    "adjective",
    "noun",
    "other",
)

LEXICON_HEADER = "# kwac-pos-lexicon v1"


class Tagger:
    def tag(self, token: str) -> str:
        raise NotImplementedError


class RuleTagger(Tagger):
    def __init__(self, lexicon: dict[str, str] | None = None):
        self.lexicon = lexicon if lexicon is not None else load_lexicon()

    def tag(self, token: str) -> str:
        tag = self.lexicon.get(token)
        if tag is not None:
            return tag
        if token.endswith("ly") and len(token) > 3:
            return "adverb"
        if token.endswith("ing") or token.endswith("ed"):
            return "verb"
        if token.isalpha():
            return "noun"
        return "other"


def load_lexicon(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("kwac.data").joinpath("pos_lexicon.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(LEXICON_HEADER):
        raise ValueError("POS lexicon missing versioned header")
    lexicon: dict[str, str] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        token, tag = line.split("\t")
        if tag not in TAGS:
            raise ValueError(f"unknown POS tag {tag!r} for token {token!r}")
        lexicon[token] = tag
    return lexicon
