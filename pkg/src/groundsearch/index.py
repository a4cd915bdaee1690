"""Positional inverted index over chunks, ranked with BM25."""

from __future__ import annotations

import math
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from groundsearch import _kernels
from groundsearch.analyzer import Token


class DuplicateChunkError(ValueError):
    pass


class ChunkNotFoundError(KeyError):
    pass


@dataclass(frozen=True)
class Posting:
    chunk_ref: str
    term_frequency: int
    positions: tuple[int, ...]


@dataclass(frozen=True)
class IndexStats:
    total_chunks: int
    avg_chunk_length: float
    chunk_lengths: Mapping[str, int]


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


class RWLock:
    """Many readers or one writer. Writers are preferred once waiting."""

    def __init__(self) -> None:
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


def idf(n_containing: int, total: int) -> float:
    # non-negative variant; stays > 0 when every chunk holds the term
    return math.log(1.0 + (total - n_containing + 0.5) / (n_containing + 0.5))


Hit = tuple[str, float]


class InvertedIndex:
    """Chunk-level positional index.

    All query methods return ``(chunk_ref, score)`` pairs ordered by score
    descending, ties broken by ``chunk_ref``.
    """

    def __init__(self, params: Bm25Params | None = None):
        self.params = params or Bm25Params()
        self._lock = RWLock()
        # term -> chunk_ref -> sorted positions
        self._postings: dict[str, dict[str, tuple[int, ...]]] = {}
        self._lengths: dict[str, int] = {}
        self._chunk_terms: dict[str, tuple[str, ...]] = {}
        self._total_length = 0

    # -- mutation ---------------------------------------------------------

    def add_chunk(self, chunk_ref: str, tokens: Sequence[Token]) -> None:
        self.add_chunks([(chunk_ref, tokens)])

    def add_chunks(self, items: Iterable[tuple[str, Sequence[Token]]]) -> None:
        """Add several chunks; readers see all of them or none."""
        prepared = []
        seen = set()
        for ref, tokens in items:
            if ref in seen:
                raise DuplicateChunkError(ref)
            seen.add(ref)
            by_term: dict[str, list[int]] = {}
            ordered = True
            last = -1
            for tok in tokens:
                p = tok.position
                if p <= last:
                    ordered = False
                last = p
                by_term.setdefault(tok.text, []).append(p)
            plists: dict[str, tuple[int, ...]] = {}
            for term, pos in by_term.items():
                if not ordered:
                    pos.sort()
                    if any(a == b for a, b in zip(pos, pos[1:])):
                        raise ValueError(f"duplicate position for term {term!r} in {ref!r}")
                plists[term] = tuple(pos)
            prepared.append((ref, len(tokens), plists))
        with self._lock.write():
            for ref, _, _ in prepared:
                if ref in self._lengths:
                    raise DuplicateChunkError(ref)
            for ref, length, plists in prepared:
                for term, pos in plists.items():
                    self._postings.setdefault(term, {})[ref] = pos
                self._lengths[ref] = length
                self._chunk_terms[ref] = tuple(plists)
                self._total_length += length

    def remove_chunk(self, chunk_ref: str) -> None:
        self.remove_chunks([chunk_ref])

    def remove_chunks(self, refs: Iterable[str]) -> None:
        refs = list(refs)
        with self._lock.write():
            missing = [r for r in refs if r not in self._lengths]
            if missing:
                raise ChunkNotFoundError(missing[0])
            for ref in refs:
                for term in self._chunk_terms.pop(ref):
                    plist = self._postings[term]
                    del plist[ref]
                    if not plist:
                        del self._postings[term]
                self._total_length -= self._lengths.pop(ref)

    # -- inspection -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._lengths)

    def __contains__(self, chunk_ref: object) -> bool:
        return chunk_ref in self._lengths

    def chunk_refs(self) -> list[str]:
        with self._lock.read():
            return sorted(self._lengths)

    def postings(self, term: str) -> list[Posting]:
        with self._lock.read():
            plist = self._postings.get(term, {})
            return [
                Posting(ref, len(pos), pos)
                for ref, pos in sorted(plist.items())
            ]

    def vocabulary(self) -> list[str]:
        with self._lock.read():
            return sorted(self._postings)

    def stats(self) -> IndexStats:
        with self._lock.read():
            n = len(self._lengths)
            avg = self._total_length / n if n else 0.0
            return IndexStats(n, avg, dict(self._lengths))

    def idf(self, term: str) -> float:
        with self._lock.read():
            return idf(len(self._postings.get(term, ())), len(self._lengths))

    # -- scoring ----------------------------------------------------------

    def bm25_score(self, query_terms: Iterable[str], chunk_ref: str,
                   params: Bm25Params | None = None) -> float:
        with self._lock.read():
            if chunk_ref not in self._lengths:
                raise ChunkNotFoundError(chunk_ref)
            return float(self._score([chunk_ref], Counter(query_terms), params or self.params)[0])

    def _score(self, refs: Sequence[str], counts: Mapping[str, int],
               params: Bm25Params) -> np.ndarray:
        out = np.zeros(len(refs), dtype=np.float64)
        if not refs:
            return out
        n = len(self._lengths)
        avgdl = self._total_length / n
        if avgdl == 0.0:
            return out
        row_of = {ref: i for i, ref in enumerate(refs)}
        rows: list[int] = []
        tfs: list[float] = []
        dls: list[float] = []
        weights: list[float] = []
        for term, mult in counts.items():
            plist = self._postings.get(term)
            if not plist:
                continue
            w = mult * idf(len(plist), n)
            if len(plist) < len(row_of):
                pairs = ((row_of[r], a) for r, a in plist.items() if r in row_of)
            else:
                pairs = ((i, plist[r]) for r, i in row_of.items() if r in plist)
            for row, arr in pairs:
                rows.append(row)
                tfs.append(len(arr))
                dls.append(self._lengths[refs[row]])
                weights.append(w)
        if rows:
            _kernels.bm25_accumulate(
                np.asarray(rows, dtype=np.int64),
                np.asarray(tfs, dtype=np.float64),
                np.asarray(dls, dtype=np.float64),
                np.asarray(weights, dtype=np.float64),
                float(params.k1), float(params.b), float(avgdl), out,
            )
        return out

    def _ranked(self, refs: Iterable[str], counts: Mapping[str, int]) -> list[Hit]:
        refs = sorted(refs)
        scores = self._score(refs, counts, self.params)
        hits = [(ref, float(s)) for ref, s in zip(refs, scores)]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits

    # -- query modes ------------------------------------------------------

    def _containing_all(self, terms: Iterable[str]) -> set[str]:
        lists = [self._postings.get(t) for t in set(terms)]
        if not lists or any(not pl for pl in lists):
            return set()
        lists.sort(key=len)
        found = set(lists[0])
        for pl in lists[1:]:
            found.intersection_update(pl)
            if not found:
                break
        return found

    def query_all(self, query_terms: Iterable[str]) -> list[Hit]:
        counts = Counter(query_terms)
        with self._lock.read():
            return self._ranked(self._containing_all(counts), counts)

    def query_any(self, query_terms: Iterable[str]) -> list[Hit]:
        counts = Counter(query_terms)
        with self._lock.read():
            found: set[str] = set()
            for term in counts:
                found.update(self._postings.get(term, ()))
            return self._ranked(found, counts)

    def query_phrase(self, query_tokens: Sequence[Token]) -> list[Hit]:
        """Chunks holding the query terms at the query's relative positions.

        Gaps in the query (removed stopwords) must be reproduced exactly in
        the chunk; with no gaps this is strict adjacency.
        """
        if not query_tokens:
            return []
        toks = sorted(query_tokens, key=lambda t: t.position)
        counts = Counter(t.text for t in toks)
        rel = np.array([t.position - toks[0].position for t in toks], dtype=np.int64)
        with self._lock.read():
            cands = sorted(self._containing_all(counts))
            if not cands:
                return []
            if len(toks) == 1:
                return self._ranked(cands, counts)
            segs = []
            starts = np.empty(len(cands) * len(toks), dtype=np.int64)
            ends = np.empty_like(starts)
            offset = 0
            for c, ref in enumerate(cands):
                for i, tok in enumerate(toks):
                    pos = self._postings[tok.text][ref]
                    segs.extend(pos)
                    starts[c * len(toks) + i] = offset
                    offset += len(pos)
                    ends[c * len(toks) + i] = offset
            positions = np.array(segs, dtype=np.int64)
            mask = _kernels.phrase_match(positions, starts, ends, rel, len(cands))
            matched = [ref for ref, ok in zip(cands, mask) if ok]
            return self._ranked(matched, counts)
