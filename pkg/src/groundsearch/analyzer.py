"""Text analysis shared by indexing and querying.

The pipeline is tokenize -> lowercase -> stopword removal -> stemming.
Token positions are assigned by the tokenizer and survive filtering, so a
removed stopword leaves a gap that phrase matching can see.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

from nltk.stem.porter import PorterStemmer

# Alphanumeric runs only; underscore and punctuation both split.
_TOKEN_RE = re.compile(r"[^\W_]+")

_porter = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@dataclass(frozen=True)
class Token:
    text: str
    position: int
    char_offset: int


def parse_stopwords(lines: Iterable[str]) -> frozenset[str]:
    words = set()
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.add(line.lower())
    return frozenset(words)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a stopword file (one term per line, ``#`` comments).

    With no path, the bundled English list is returned.
    """
    if path is None:
        text = resources.files("groundsearch.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_stopwords(text.splitlines())


DEFAULT_STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class AnalyzerConfig:
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    stemming_enabled: bool = True
    min_token_length: int = 1

    def __post_init__(self) -> None:
        if self.min_token_length < 1:
            raise ValueError("min_token_length must be >= 1")
        # keep the set closed under our own lowercasing
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))


def _normalize(surface: str) -> str:
    lowered = surface.lower()
    if lowered.isalnum():
        return lowered
    # lowercasing can introduce combining marks (e.g. U+0130)
    return "".join(ch for ch in lowered if ch.isalnum())


def tokenize(text: str) -> list[Token]:
    """Split ``text`` on non-alphanumeric boundaries and lowercase each piece.

    >>> [(t.text, t.char_offset) for t in tokenize("BM25 scoring-function!")]
    [('bm25', 0), ('scoring', 5), ('function', 13)]
    """
    out = []
    for i, m in enumerate(_TOKEN_RE.finditer(text)):
        term = _normalize(m.group())
        if term:
            out.append(Token(term, i, m.start()))
    return out


@lru_cache(maxsize=1 << 16)
def stem(word: str) -> str:
    """Porter stem, iterated until the result no longer changes.

    A single Porter pass is not idempotent (``agreed -> agre -> agr``);
    iterating makes every emitted term a fixed point, so re-analysing
    analysed text is stable.
    """
    prev = word
    while True:
        cur = _porter.stem(prev)
        if not cur or cur == prev:
            return prev
        prev = cur


def analyze(text: str, config: AnalyzerConfig | None = None) -> list[Token]:
    cfg = config or AnalyzerConfig()
    stopwords = cfg.stopwords
    min_len = cfg.min_token_length
    stemming = cfg.stemming_enabled
    # ASCII lowercasing keeps offsets, so the whole text can be lowered once
    fast = text.isascii()
    source = text.lower() if fast else text
    out: list[Token] = []
    for i, m in enumerate(_TOKEN_RE.finditer(source)):
        term = m.group() if fast else _normalize(m.group())
        if len(term) < min_len or term in stopwords:
            continue
        if stemming:
            term = stem(term)
            if len(term) < min_len or term in stopwords:
                continue
        out.append(Token(term, i, m.start()))
    return out


class Analyzer:
    """Bound analyzer; the same instance should serve index and query sides."""

    def __init__(self, config: AnalyzerConfig | None = None):
        self.config = config or AnalyzerConfig()

    def __call__(self, text: str) -> list[Token]:
        return analyze(text, self.config)

    def terms(self, text: str) -> list[str]:
        return [t.text for t in analyze(text, self.config)]


def surface_at(text: str, char_offset: int) -> str:
    """The raw token starting at ``char_offset`` (empty if none starts there)."""
    m = _TOKEN_RE.match(text, char_offset)
    return m.group() if m else ""
