"""Document ingestion: upload validation, page planning, chunking, figures, tables."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Literal, Optional

from groundsearch.extractors import (
    ExtractedPage,
    ExtractionError,
    PageExtractor,
    RawFigure,
    RawTable,
    Rect,
)
from groundsearch.records import (
    ChunkRecord,
    DocStatus,
    DocumentRecord,
    FigureRecord,
    TableRecord,
    record_id,
)
from groundsearch.store import DocumentStore, StoreError

logger = logging.getLogger(__name__)

MAX_UPLOAD_BYTES = 100 * 1024 * 1024
CHUNK_CHARS = 3000
MIN_CHUNK_CHARS = 100
PARALLEL_MIN_PAGES = 50
PAGES_PER_RANGE = 5
MIN_FIGURE_PX = 100
CAPTION_DISTANCE = 100.0


class PayloadTooLarge(ValueError):
    def __init__(self, size: int, limit: int = MAX_UPLOAD_BYTES):
        super().__init__(f"payload of {size} bytes exceeds limit of {limit} bytes")
        self.size = size
        self.limit = limit


@dataclass
class UploadRequest:
    filename: str
    data: bytes
    markdown_mode: bool = False

    def validate(self) -> None:
        if not self.filename:
            raise ValueError("filename must be non-empty")
        if len(self.data) > MAX_UPLOAD_BYTES:
            raise PayloadTooLarge(len(self.data))


def compute_doc_id(filename: str) -> str:
    if not filename:
        raise ValueError("filename must be non-empty")
    return hashlib.md5(filename.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ProcessingPlan:
    mode: Literal["sequential", "parallel"]
    ranges: tuple[tuple[int, int], ...]  # inclusive 1-based page ranges
    workers: int = 1


def plan_processing(total_pages: int, cpu_count: Optional[int] = None) -> ProcessingPlan:
    if total_pages < 1:
        raise ValueError("a document needs at least one page")
    if total_pages < PARALLEL_MIN_PAGES:
        return ProcessingPlan("sequential", ((1, total_pages),), 1)
    ranges = tuple(
        (first, min(first + PAGES_PER_RANGE - 1, total_pages))
        for first in range(1, total_pages + 1, PAGES_PER_RANGE)
    )
    cpus = cpu_count or os.cpu_count() or 1
    return ProcessingPlan("parallel", ranges, max(1, min(cpus, len(ranges))))


def chunk_page(page: ExtractedPage, parent_doc_id: str) -> list[ChunkRecord]:
    text = page.text
    out = []
    for start in range(0, len(text), CHUNK_CHARS):
        piece = text[start:start + CHUNK_CHARS]
        if len(piece) < MIN_CHUNK_CHARS:
            continue  # only ever the tail
        out.append(ChunkRecord(record_id(parent_doc_id, page.page_number, len(out)),
                               parent_doc_id, page.page_number, start, piece, True))
    return out


def _near(a: Rect, b: Rect, dist: float) -> bool:
    # b intersects a grown by dist on every side
    return not (b[2] < a[0] - dist or b[0] > a[2] + dist or
                b[3] < a[1] - dist or b[1] > a[3] + dist)


def figure_caption(fig: RawFigure, dist: float = CAPTION_DISTANCE) -> str:
    near = [(r[1], r[0], t.strip()) for t, r in fig.nearby_texts if _near(fig.bbox, r, dist)]
    near.sort()
    return " ".join(t for _, _, t in near if t)


def extract_figures(page: ExtractedPage, parent_doc_id: str) -> list[FigureRecord]:
    out = []
    for fig in page.figures:
        if fig.width_px < MIN_FIGURE_PX or fig.height_px < MIN_FIGURE_PX:
            continue
        out.append(FigureRecord(record_id(parent_doc_id, page.page_number, len(out)),
                                parent_doc_id, page.page_number, figure_caption(fig),
                                fig.ocr_text))
    return out


def table_to_markdown(table: RawTable) -> str:
    if not table.cells or not any(table.cells):
        raise ValueError("table has no cells")
    return "\n".join(
        " | ".join(str(c).replace("|", "\\|") for c in row) for row in table.cells)


def extract_tables(page: ExtractedPage, parent_doc_id: str) -> list[TableRecord]:
    out = []
    for table in page.tables:
        if not table.cells or not any(table.cells):
            continue
        out.append(TableRecord(record_id(parent_doc_id, page.page_number, len(out)),
                               parent_doc_id, page.page_number, table_to_markdown(table),
                               table.caption))
    return out


@dataclass
class PageOutput:
    chunks: list[ChunkRecord] = field(default_factory=list)
    figures: list[FigureRecord] = field(default_factory=list)
    tables: list[TableRecord] = field(default_factory=list)

    def extend(self, other: "PageOutput") -> None:
        self.chunks.extend(other.chunks)
        self.figures.extend(other.figures)
        self.tables.extend(other.tables)


def process_range(extractor: PageExtractor, data: bytes, filename: str, markdown_mode: bool,
                  doc_id: str, first: int, last: int) -> PageOutput:
    """Extract and split pages ``first..last``. Top-level so workers can pickle it."""
    pages = extractor.extract_pages(data, filename, first, last, markdown_mode)
    numbers = [p.page_number for p in pages]
    if numbers != list(range(first, last + 1)):
        raise ExtractionError(f"extractor returned pages {numbers}, wanted {first}..{last}")
    out = PageOutput()
    for page in pages:
        out.chunks.extend(chunk_page(page, doc_id))
        out.figures.extend(extract_figures(page, doc_id))
        out.tables.extend(extract_tables(page, doc_id))
    return out


ExecutorFactory = Callable[[int], Executor]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def begin_ingest(request: UploadRequest, store: DocumentStore) -> tuple[str, bool]:
    """Validate, drop any previous document of the same name, register the upload.

    Returns ``(doc_id, replaced)``. The document is left in status
    ``processing``.
    """
    request.validate()
    doc_id = compute_doc_id(request.filename)
    replaced = store.get_document(doc_id) is not None
    if replaced:
        logger.warning("replacing existing document %s (%s)", doc_id, request.filename)
        store.delete_document(doc_id)
    store.create_document(DocumentRecord(doc_id, request.filename, _now()))
    store.set_status(doc_id, DocStatus.PROCESSING)
    return doc_id, replaced


def run_ingest(doc_id: str, request: UploadRequest, extractor: PageExtractor,
               store: DocumentStore, *, plan: Optional[ProcessingPlan] = None,
               executor_factory: Optional[ExecutorFactory] = None) -> DocumentRecord:
    """Process a registered upload; all-or-nothing per document."""
    doc = store.get_document(doc_id)
    try:
        total = extractor.page_count(request.data, request.filename)
        plan = plan or plan_processing(total)
        out = PageOutput()
        args = (extractor, request.data, request.filename, request.markdown_mode, doc_id)
        if plan.mode == "sequential":
            for first, last in plan.ranges:
                out.extend(process_range(*args, first, last))
        else:
            factory = executor_factory or (lambda n: ProcessPoolExecutor(max_workers=n))
            with factory(plan.workers) as pool:
                futures = [pool.submit(process_range, *args, first, last)
                           for first, last in plan.ranges]
                for fut in futures:
                    out.extend(fut.result())
    except Exception as exc:  # any page failure fails the whole document
        logger.exception("ingest of %s failed", doc_id)
        return store.set_status(doc_id, DocStatus.FAILED, f"{type(exc).__name__}: {exc}")
    processing = DocumentRecord(doc.doc_id, doc.filename, doc.upload_time, total,
                                DocStatus.PROCESSING)
    try:
        return store.put_batch(processing, out.chunks, out.figures, out.tables)
    except StoreError as exc:
        return store.set_status(doc_id, DocStatus.FAILED, f"storage error: {exc}")


def ingest_document(request: UploadRequest, extractor: PageExtractor, store: DocumentStore,
                    **kwargs) -> str:
    doc_id, _ = begin_ingest(request, store)
    run_ingest(doc_id, request, extractor, store, **kwargs)
    return doc_id


def thread_executor(n: int) -> Executor:
    return ThreadPoolExecutor(max_workers=n)
