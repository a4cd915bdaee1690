"""Durable document store: documents, chunks, figures and tables.

On disk a store is one directory::

    LOCK            advisory lock, one process at a time
    snapshot.json   full state as of sequence number ``seq`` (optional)
    store.log       header line ``GSSTORE <version>`` then one record per line:
                    ``<crc32 as 8 hex digits> <json>``

Every mutation is a single log record, so a batch is either replayed in
full or not at all. A torn or corrupt tail is dropped (and truncated) on
open. Records with ``seq`` at or below the snapshot's are skipped, which
makes a crash between snapshot and log reset harmless.

An optional :class:`~groundsearch.index.InvertedIndex` is kept in step with
the chunks of indexed documents.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import threading
import zlib
from pathlib import Path
from typing import Any, Iterable, Optional

from groundsearch.analyzer import Analyzer
from groundsearch.index import InvertedIndex, RWLock
from groundsearch.records import (
    ChunkRecord,
    DocStatus,
    DocumentRecord,
    FigureRecord,
    TableRecord,
    can_transition,
)

logger = logging.getLogger(__name__)

MAGIC = "GSSTORE"
FORMAT_VERSION = 1
LOG_NAME = "store.log"
SNAPSHOT_NAME = "snapshot.json"
LOCK_NAME = "LOCK"


class StoreError(RuntimeError):
    pass


class StoreFormatError(StoreError):
    pass


class DocumentNotFound(KeyError):
    pass


class LifecycleError(StoreError):
    pass


class SimulatedCrash(Exception):
    """Raised by the ``crash_after_bytes`` test hook after a torn write."""


def _encode(record: dict[str, Any]) -> bytes:
    body = json.dumps(record, separators=(",", ":"), ensure_ascii=False, sort_keys=True)
    raw = body.encode("utf-8")
    return b"%08x " % zlib.crc32(raw) + raw + b"\n"


def _decode(line: bytes) -> Optional[dict[str, Any]]:
    if not line.endswith(b"\n") or len(line) < 10 or line[8:9] != b" ":
        return None
    raw = line[9:-1]
    try:
        if int(line[:8], 16) != zlib.crc32(raw):
            return None
        return json.loads(raw.decode("utf-8"))
    except ValueError:
        return None


def _header() -> bytes:
    return f"{MAGIC} {FORMAT_VERSION}\n".encode()


def _check_version(version: int, where: str) -> None:
    if version > FORMAT_VERSION:
        raise StoreFormatError(
            f"{where}: format version {version} is newer than supported {FORMAT_VERSION}")


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class DocumentStore:
    def __init__(self, path: str | os.PathLike, *, index: InvertedIndex | None = None,
                 analyzer: Analyzer | None = None, durable: bool = True,
                 compact_every: int = 512):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.index = index
        self.analyzer = analyzer or Analyzer()
        self.durable = durable
        self.compact_every = compact_every
        # test hook: tear the next append after this many bytes
        self.crash_after_bytes: Optional[int] = None

        self._rw = RWLock()
        self._write_lock = threading.Lock()
        self._docs: dict[str, DocumentRecord] = {}
        self._chunks: dict[str, list[ChunkRecord]] = {}
        self._chunk_by_id: dict[str, ChunkRecord] = {}
        self._figures: dict[str, list[FigureRecord]] = {}
        self._tables: dict[str, list[TableRecord]] = {}
        self._seq = 0
        self._since_snapshot = 0
        self._log = None
        self._lock_fh = None
        self._open()

    # -- lifecycle --------------------------------------------------------

    def _open(self) -> None:
        self._lock_fh = open(self.path / LOCK_NAME, "a+b")
        try:
            fcntl.flock(self._lock_fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._lock_fh.close()
            self._lock_fh = None
            raise StoreError(f"store at {self.path} is in use by another process")
        self._load_snapshot()
        self._replay_log()
        self._log = open(self.path / LOG_NAME, "ab")
        if self.index is not None:
            self.index.add_chunks(
                (c.chunk_id, self.analyzer(c.text))
                for doc_id, doc in self._docs.items() if doc.status is DocStatus.INDEXED
                for c in self._chunks.get(doc_id, ())
            )
        # ingestion cannot resume across restarts
        for doc in list(self._docs.values()):
            if doc.status in (DocStatus.UPLOADED, DocStatus.PROCESSING):
                if doc.status is DocStatus.UPLOADED:
                    self.set_status(doc.doc_id, DocStatus.PROCESSING)
                self.set_status(doc.doc_id, DocStatus.FAILED, "interrupted before indexing completed")

    def _load_snapshot(self) -> None:
        snap = self.path / SNAPSHOT_NAME
        if not snap.exists():
            return
        data = json.loads(snap.read_text("utf-8"))
        if data.get("magic") != MAGIC:
            raise StoreFormatError(f"{snap}: bad magic")
        _check_version(int(data.get("version", 0)), str(snap))
        self._seq = int(data["seq"])
        for d in data["documents"]:
            self._docs[d["doc_id"]] = DocumentRecord.from_dict(d)
        for c in data["chunks"]:
            rec = ChunkRecord.from_dict(c)
            self._chunks.setdefault(rec.parent_doc_id, []).append(rec)
            self._chunk_by_id[rec.chunk_id] = rec
        for f in data["figures"]:
            rec = FigureRecord.from_dict(f)
            self._figures.setdefault(rec.parent_doc_id, []).append(rec)
        for t in data["tables"]:
            rec = TableRecord.from_dict(t)
            self._tables.setdefault(rec.parent_doc_id, []).append(rec)

    def _replay_log(self) -> None:
        log_path = self.path / LOG_NAME
        if not log_path.exists() or log_path.stat().st_size < len(_header()):
            self._reset_log()
            return
        good_end = 0
        with open(log_path, "rb") as fh:
            head = fh.readline()
            parts = head.decode("ascii", "replace").split()
            if len(parts) != 2 or parts[0] != MAGIC or not parts[1].isdigit():
                raise StoreFormatError(f"{log_path}: bad header {head!r}")
            _check_version(int(parts[1]), str(log_path))
            good_end = fh.tell()
            for line in fh:
                rec = _decode(line)
                if rec is None:
                    logger.warning("dropping torn/corrupt log tail at byte %d", good_end)
                    break
                good_end += len(line)
                if rec["seq"] <= self._seq:
                    continue
                self._apply(rec)
                self._seq = rec["seq"]
                self._since_snapshot += 1
        if good_end < log_path.stat().st_size:
            with open(log_path, "r+b") as fh:
                fh.truncate(good_end)

    def _reset_log(self) -> None:
        tmp = self.path / (LOG_NAME + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_header())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path / LOG_NAME)
        _fsync_dir(self.path)

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    def __enter__(self) -> "DocumentStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- log machinery ----------------------------------------------------

    def _append(self, record: dict[str, Any]) -> None:
        if self._log is None:
            raise StoreError("store is closed")
        record["seq"] = self._seq + 1
        data = _encode(record)
        start = self._log.tell()
        if self.crash_after_bytes is not None:
            cut = self.crash_after_bytes
            self.crash_after_bytes = None
            if cut < len(data):
                self._log.write(data[:cut])
                self._log.flush()
                self.close()
                raise SimulatedCrash(f"torn write after {cut} of {len(data)} bytes")
        try:
            self._log.write(data)
            self._log.flush()
            if self.durable:
                os.fsync(self._log.fileno())
        except OSError as exc:
            try:
                self._log.truncate(start)
                self._log.seek(start)
            except OSError:
                pass
            raise StoreError(f"write failed, batch rejected: {exc}") from exc
        self._seq += 1
        self._since_snapshot += 1

    def _commit(self, record: dict[str, Any]) -> None:
        self._append(record)
        self._apply_live(record)
        if self._since_snapshot >= self.compact_every:
            self.compact()

    def _apply_live(self, record: dict[str, Any]) -> None:
        op = record["op"]
        if self.index is not None and op == "batch":
            self.index.add_chunks(
                (c["chunk_id"], self.analyzer(c["text"])) for c in record["chunks"])
        if self.index is not None and op == "delete":
            refs = [c.chunk_id for c in self._chunks.get(record["doc_id"], ())]
            with self._rw.write():
                self._apply(record)
            if refs:
                self.index.remove_chunks(refs)
            return
        with self._rw.write():
            self._apply(record)

    def _apply(self, record: dict[str, Any]) -> None:
        op = record["op"]
        if op == "create":
            doc = DocumentRecord.from_dict(record["doc"])
            self._docs[doc.doc_id] = doc
        elif op == "status":
            old = self._docs[record["doc_id"]]
            self._docs[old.doc_id] = DocumentRecord(
                old.doc_id, old.filename, old.upload_time,
                record.get("total_pages", old.total_pages),
                DocStatus(record["status"]), record.get("failure_reason"))
        elif op == "batch":
            doc = DocumentRecord.from_dict(record["doc"])
            self._docs[doc.doc_id] = doc
            chunks = [ChunkRecord.from_dict(c) for c in record["chunks"]]
            self._chunks[doc.doc_id] = chunks
            for c in chunks:
                self._chunk_by_id[c.chunk_id] = c
            self._figures[doc.doc_id] = [FigureRecord.from_dict(f) for f in record["figures"]]
            self._tables[doc.doc_id] = [TableRecord.from_dict(t) for t in record["tables"]]
        elif op == "delete":
            doc_id = record["doc_id"]
            self._docs.pop(doc_id, None)
            for c in self._chunks.pop(doc_id, ()):
                self._chunk_by_id.pop(c.chunk_id, None)
            self._figures.pop(doc_id, None)
            self._tables.pop(doc_id, None)
        else:
            raise StoreFormatError(f"unknown log op {op!r}")

    def compact(self) -> None:
        """Write a snapshot of the current state and reset the log."""
        with self._rw.read():
            data = {
                "magic": MAGIC,
                "version": FORMAT_VERSION,
                "seq": self._seq,
                "documents": [d.to_dict() for d in self._docs.values()],
                "chunks": [c.to_dict() for cs in self._chunks.values() for c in cs],
                "figures": [f.to_dict() for fs in self._figures.values() for f in fs],
                "tables": [t.to_dict() for ts in self._tables.values() for t in ts],
            }
        tmp = self.path / (SNAPSHOT_NAME + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, ensure_ascii=False)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path / SNAPSHOT_NAME)
        _fsync_dir(self.path)
        self._log.close()
        self._reset_log()
        self._log = open(self.path / LOG_NAME, "ab")
        self._since_snapshot = 0

    # -- writes -----------------------------------------------------------

    def create_document(self, doc: DocumentRecord) -> None:
        if doc.status is not DocStatus.UPLOADED:
            raise LifecycleError("new documents start in status 'uploaded'")
        with self._write_lock:
            if doc.doc_id in self._docs:
                raise StoreError(f"document {doc.doc_id} already exists")
            self._commit({"op": "create", "doc": doc.to_dict()})

    def set_status(self, doc_id: str, status: DocStatus | str,
                   failure_reason: Optional[str] = None, *,
                   total_pages: Optional[int] = None) -> DocumentRecord:
        status = DocStatus(status)
        with self._write_lock:
            old = self._docs.get(doc_id)
            if old is None:
                raise DocumentNotFound(doc_id)
            if not can_transition(old.status, status):
                raise LifecycleError(f"{doc_id}: {old.status.value} -> {status.value} not allowed")
            if status is DocStatus.FAILED and not failure_reason:
                failure_reason = "unknown failure"
            rec: dict[str, Any] = {"op": "status", "doc_id": doc_id, "status": status.value}
            if status is DocStatus.FAILED:
                rec["failure_reason"] = failure_reason
            if total_pages is not None:
                rec["total_pages"] = total_pages
            self._commit(rec)
            return self._docs[doc_id]

    def put_batch(self, document: DocumentRecord, chunks: Iterable[ChunkRecord] = (),
                  figures: Iterable[FigureRecord] = (),
                  tables: Iterable[TableRecord] = ()) -> DocumentRecord:
        """Atomically store a processed document's records and mark it indexed."""
        chunks, figures, tables = list(chunks), list(figures), list(tables)
        doc_id = document.doc_id
        if document.status is not DocStatus.PROCESSING:
            raise LifecycleError("put_batch expects a document in status 'processing'")
        for rec in (*chunks, *figures, *tables):
            if rec.parent_doc_id != doc_id:
                raise StoreError(f"record parent {rec.parent_doc_id} != {doc_id}")
        with self._write_lock:
            current = self._docs.get(doc_id)
            if current is None:
                raise DocumentNotFound(doc_id)
            if current.status is not DocStatus.PROCESSING:
                raise LifecycleError(f"{doc_id} is {current.status.value}, not processing")
            final = DocumentRecord(doc_id, document.filename, document.upload_time,
                                   document.total_pages, DocStatus.INDEXED)
            self._commit({
                "op": "batch",
                "doc": final.to_dict(),
                "chunks": [c.to_dict() for c in chunks],
                "figures": [f.to_dict() for f in figures],
                "tables": [t.to_dict() for t in tables],
            })
            return final

    def delete_document(self, doc_id: str) -> None:
        with self._write_lock:
            if doc_id not in self._docs:
                raise DocumentNotFound(doc_id)
            self._commit({"op": "delete", "doc_id": doc_id})

    # -- reads ------------------------------------------------------------

    def get_document(self, doc_id: str) -> Optional[DocumentRecord]:
        return self._docs.get(doc_id)

    def list_documents(self) -> list[DocumentRecord]:
        with self._rw.read():
            return sorted(self._docs.values(), key=lambda d: d.doc_id)

    def chunks(self, doc_id: str) -> list[ChunkRecord]:
        with self._rw.read():
            return list(self._chunks.get(doc_id, ()))

    def get_chunk(self, chunk_id: str) -> Optional[ChunkRecord]:
        return self._chunk_by_id.get(chunk_id)

    def figures(self, doc_id: str) -> list[FigureRecord]:
        with self._rw.read():
            return list(self._figures.get(doc_id, ()))

    def tables(self, doc_id: str) -> list[TableRecord]:
        with self._rw.read():
            return list(self._tables.get(doc_id, ()))

    def records_for_pages(self, doc_id: str, pages: Iterable[int]
                          ) -> tuple[list[FigureRecord], list[TableRecord]]:
        pages = set(pages)
        with self._rw.read():
            if doc_id not in self._docs:
                raise DocumentNotFound(doc_id)
            figs = [f for f in self._figures.get(doc_id, ()) if f.page_number in pages]
            tabs = [t for t in self._tables.get(doc_id, ()) if t.page_number in pages]
        return figs, tabs

    def integrity_violations(self) -> list[str]:
        """Child records whose parent document is missing (should be empty)."""
        problems = []
        with self._rw.read():
            for kind, table in (("chunk", self._chunks), ("figure", self._figures),
                                ("table", self._tables)):
                for doc_id, recs in table.items():
                    if recs and doc_id not in self._docs:
                        problems.append(f"{kind} records for missing document {doc_id}")
            if self.index is not None:
                expected = {c.chunk_id for d, cs in self._chunks.items()
                            if self._docs[d].status is DocStatus.INDEXED for c in cs}
                if set(self.index.chunk_refs()) != expected:
                    problems.append("index chunk set differs from stored indexed chunks")
        return problems
