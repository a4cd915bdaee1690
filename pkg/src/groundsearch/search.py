"""Three-tier lexical search with per-document aggregation.

A query is tried as an exact phrase first, then as an all-terms match, then
as an any-term match; the first tier with a visible chunk hit wins. Chunk
hits are grouped by parent document, which is scored by its best chunk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Sequence

from groundsearch.analyzer import Analyzer, Token, surface_at
from groundsearch.index import Hit, InvertedIndex
from groundsearch.records import ChunkRecord, DocStatus, FigureRecord, TableRecord
from groundsearch.store import DocumentStore

SNIPPET_WINDOW = 200
MAX_SNIPPETS = 3


class Tier(str, Enum):
    PHRASE = "phrase"
    ALL = "all"
    ANY = "any"


@dataclass(frozen=True)
class SearchQuery:
    query_text: str
    max_results: int = 10
    doc_filter: Optional[frozenset[str]] = None

    def __post_init__(self) -> None:
        if self.max_results < 1:
            raise ValueError("max_results must be >= 1")
        if self.doc_filter is not None:
            object.__setattr__(self, "doc_filter", frozenset(self.doc_filter))


@dataclass(frozen=True)
class Snippet:
    page_number: int
    text: str
    match_term: str
    chunk_id: str = ""
    start: int = 0  # offset of ``text`` within the chunk


@dataclass(frozen=True)
class SearchResult:
    parent_doc_id: str
    filename: str
    score: float
    tier: Tier
    matched_pages: tuple[int, ...]
    snippets: tuple[Snippet, ...] = ()
    figures: tuple[FigureRecord, ...] = ()
    tables: tuple[TableRecord, ...] = ()

    def to_api(self) -> dict[str, Any]:
        return {
            "doc_id": self.parent_doc_id,
            "filename": self.filename,
            "score": self.score,
            "pages": list(self.matched_pages),
            "snippets": [{"page": s.page_number, "text": s.text} for s in self.snippets],
            "figures": [_figure_api(f) for f in self.figures],
            "tables": [_table_api(t) for t in self.tables],
        }


def _figure_api(f: FigureRecord) -> dict[str, Any]:
    d: dict[str, Any] = {"page": f.page_number, "caption": f.caption}
    if f.ocr_text is not None:
        d["ocr_text"] = f.ocr_text
    return d


def _table_api(t: TableRecord) -> dict[str, Any]:
    d: dict[str, Any] = {"page": t.page_number, "markdown": t.markdown}
    if t.caption is not None:
        d["caption"] = t.caption
    return d


def make_snippet(chunk: ChunkRecord, match_position: int, window: int = SNIPPET_WINDOW,
                 match_length: int = 0, match_term: str = "") -> Snippet:
    """Window of at most ``window`` chars, centred on the match start.

    The window slides inward at chunk edges so it stays full when the chunk
    allows, and stretches right to keep a match of up to ``window`` chars whole.
    """
    text = chunk.text
    n = len(text)
    half = window // 2
    start = max(0, match_position - half)
    end = min(n, start + window)
    if match_length and match_position + match_length > end:
        end = min(n, match_position + match_length)
    start = max(0, end - window)
    return Snippet(chunk.page_number, text[start:end], match_term, chunk.chunk_id, start)


def _phrase_anchor(chunk_tokens: Sequence[Token], query: Sequence[Token]) -> Optional[Token]:
    by_pos = {t.position: t.text for t in chunk_tokens}
    q0 = query[0].position
    for tok in chunk_tokens:
        if tok.text != query[0].text:
            continue
        base = tok.position - q0
        if all(by_pos.get(base + q.position) == q.text for q in query[1:]):
            return tok
    return None


class SearchEngine:
    def __init__(self, store: DocumentStore, index: Optional[InvertedIndex] = None,
                 analyzer: Optional[Analyzer] = None):
        self.store = store
        self.index = index if index is not None else store.index
        if self.index is None:
            raise ValueError("search needs an index (pass one or attach it to the store)")
        self.analyzer = analyzer or store.analyzer

    def _visible(self, hits: list[Hit], doc_filter) -> list[tuple[str, float, ChunkRecord]]:
        out = []
        for ref, score in hits:
            chunk = self.store.get_chunk(ref)
            if chunk is None:
                continue
            doc = self.store.get_document(chunk.parent_doc_id)
            if doc is None or doc.status is not DocStatus.INDEXED:
                continue
            if doc_filter is not None and doc.doc_id not in doc_filter:
                continue
            out.append((ref, score, chunk))
        return out

    def run(self, query: SearchQuery | str) -> tuple[Tier, list[SearchResult]]:
        """Search and also report the tier used (``any`` when nothing matched)."""
        if isinstance(query, str):
            query = SearchQuery(query)
        tokens = sorted(self.analyzer(query.query_text), key=lambda t: t.position)
        if not tokens:
            return Tier.ANY, []
        terms = [t.text for t in tokens]
        attempts: list[tuple[Tier, Callable[[], list[Hit]]]] = [
            (Tier.PHRASE, lambda: self.index.query_phrase(tokens)),
            (Tier.ALL, lambda: self.index.query_all(terms)),
            (Tier.ANY, lambda: self.index.query_any(terms)),
        ]
        hits: list = []
        for tier, attempt in attempts:
            hits = self._visible(attempt(), query.doc_filter)
            if hits:
                break
        if not hits:
            return Tier.ANY, []

        groups: dict[str, list[tuple[str, float, ChunkRecord]]] = {}
        for hit in hits:
            groups.setdefault(hit[2].parent_doc_id, []).append(hit)
        ranked = []
        for doc_id, doc_hits in groups.items():
            doc_hits.sort(key=lambda h: (-h[1], h[0]))
            ranked.append((doc_hits[0][1], doc_id, doc_hits))
        ranked.sort(key=lambda r: (-r[0], r[1]))

        results = []
        for score, doc_id, doc_hits in ranked[:query.max_results]:
            doc = self.store.get_document(doc_id)
            pages = tuple(sorted({h[2].page_number for h in doc_hits}))
            snippets = tuple(
                s for s in (self._snippet(h[2], tier, tokens) for h in doc_hits[:MAX_SNIPPETS])
                if s is not None)
            result = SearchResult(doc_id, doc.filename if doc else "", score, tier,
                                  pages, snippets)
            results.append(self.attach_context(result))
        return tier, results

    def search(self, query: SearchQuery | str) -> list[SearchResult]:
        return self.run(query)[1]

    def _snippet(self, chunk: ChunkRecord, tier: Tier,
                 query_tokens: Sequence[Token]) -> Optional[Snippet]:
        chunk_tokens = self.analyzer(chunk.text)
        if tier is Tier.PHRASE:
            anchor = _phrase_anchor(chunk_tokens, query_tokens)
        else:
            wanted = {t.text for t in query_tokens}
            anchor = next((t for t in chunk_tokens if t.text in wanted), None)
        if anchor is None:
            return None
        length = len(surface_at(chunk.text, anchor.char_offset))
        return make_snippet(chunk, anchor.char_offset, SNIPPET_WINDOW, length, anchor.text)

    def attach_context(self, result: SearchResult) -> SearchResult:
        figures, tables = self.store.records_for_pages(result.parent_doc_id,
                                                       result.matched_pages)
        return replace(result, figures=tuple(figures), tables=tuple(tables))


def response_payload(tier: Tier, results: Iterable[SearchResult]) -> dict[str, Any]:
    return {"tier": tier.value, "results": [r.to_api() for r in results]}
