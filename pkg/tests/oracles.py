"""Brute-force reference implementations used to check the index and search.

Nothing here touches the inverted index or the kernels: scores are computed
term by term with ``math.log`` straight from the BM25 definition, and
matching is done by scanning token sequences.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

# corpus: chunk_ref -> list of (term, position)
Corpus = Mapping[str, Sequence[tuple[str, int]]]


def bm25(corpus: Corpus, query_terms: Sequence[str], ref: str, k1=1.2, b=0.75) -> float:
    n = len(corpus)
    avgdl = sum(len(toks) for toks in corpus.values()) / n
    dl = len(corpus[ref])
    total = 0.0
    for t in query_terms:  # multiset: repeats count again
        f = sum(1 for term, _ in corpus[ref] if term == t)
        if f == 0:
            continue
        nt = sum(1 for toks in corpus.values() if any(term == t for term, _ in toks))
        idf = math.log(1 + (n - nt + 0.5) / (nt + 0.5))
        total += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * dl / avgdl))
    return total


def bm25_table(corpus: Corpus, query_terms: Sequence[str], k1=1.2, b=0.75) -> dict[str, float]:
    """Same formula as ``bm25`` for every chunk, scanning each term's df once."""
    n = len(corpus)
    avgdl = sum(len(toks) for toks in corpus.values()) / n
    df = {t: sum(1 for toks in corpus.values() if any(term == t for term, _ in toks))
          for t in set(query_terms)}
    out = {}
    for ref, toks in corpus.items():
        dl = len(toks)
        total = 0.0
        for t in query_terms:
            f = sum(1 for term, _ in toks if term == t)
            if f == 0:
                continue
            idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
            total += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * dl / avgdl))
        out[ref] = total
    return out


def phrase_refs(corpus: Corpus, query: Sequence[tuple[str, int]]) -> set[str]:
    if not query:
        return set()
    q0 = query[0][1]
    out = set()
    for ref, toks in corpus.items():
        at = {pos: term for term, pos in toks}
        for term, pos in toks:
            if all(at.get(pos + qp - q0) == qt for qt, qp in query):
                out.add(ref)
                break
    return out


def all_refs(corpus: Corpus, terms: Sequence[str]) -> set[str]:
    if not terms:
        return set()
    return {ref for ref, toks in corpus.items()
            if all(any(term == t for term, _ in toks) for t in terms)}


def any_refs(corpus: Corpus, terms: Sequence[str]) -> set[str]:
    return {ref for ref, toks in corpus.items()
            if any(term == t for term, _ in toks for t in terms)}


def three_tier(corpus: Corpus, query: Sequence[tuple[str, int]]) -> tuple[str, set[str]]:
    """Returns (tier, chunk refs) the way the fallback is defined."""
    terms = [t for t, _ in query]
    for tier, refs in (("phrase", phrase_refs(corpus, query)),
                       ("all", all_refs(corpus, terms)),
                       ("any", any_refs(corpus, terms))):
        if refs:
            return tier, refs
    return "any", set()


def rel_close(a: float, b: float, tol: float = 1e-9) -> bool:
    if a == b:
        return True
    return abs(a - b) <= tol * max(abs(a), abs(b))
