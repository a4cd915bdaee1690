"""HTTP API: document upload and status, search, and tool discovery."""

from __future__ import annotations

import configparser
import logging
import shlex
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from groundsearch.analyzer import Analyzer, AnalyzerConfig, DEFAULT_STOPWORDS, load_stopwords
from groundsearch.extractors import ExtractionError, extractor_for
from groundsearch.index import Bm25Params, InvertedIndex
from groundsearch.ingest import (
    MAX_UPLOAD_BYTES,
    UploadRequest,
    begin_ingest,
    compute_doc_id,
    run_ingest,
)
from groundsearch.lsp_bridge import ServerConfig
from groundsearch.records import DocStatus
from groundsearch.search import SearchEngine, SearchQuery, response_payload
from groundsearch.store import DocumentStore
from groundsearch.tools import LazyLspSession, ToolRegistry, build_registry

logger = logging.getLogger(__name__)


class IngestInProgress(RuntimeError):
    pass


@dataclass
class ServiceConfig:
    data_dir: Path
    stopwords: Optional[Path] = None
    k1: float = 1.2
    b: float = 0.75
    token: Optional[str] = None
    ingest_workers: int = 2
    lsp: list[ServerConfig] = field(default_factory=list)
    durable: bool = True


def read_lsp_config(path: str | Path) -> list[ServerConfig]:
    """``[lsp.<language_id>]`` sections with ``command`` and ``root`` keys."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    base = Path(path).resolve().parent
    out = []
    for section in parser.sections():
        if not section.startswith("lsp."):
            continue
        sec = parser[section]
        root = Path(sec.get("root", "."))
        out.append(ServerConfig(
            launch_command=shlex.split(sec["command"]),
            root_path=str(root if root.is_absolute() else base / root),
            language_id=section[len("lsp."):],
            initialize_timeout=sec.getfloat("initialize_timeout", 10.0),
        ))
    return out


class GroundingService:
    """Owns the store, index, search engine, tool registry and ingest workers."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        stopwords = load_stopwords(config.stopwords) if config.stopwords else DEFAULT_STOPWORDS
        self.analyzer = Analyzer(AnalyzerConfig(stopwords=stopwords))
        self.index = InvertedIndex(Bm25Params(config.k1, config.b))
        self.store = DocumentStore(config.data_dir, index=self.index, analyzer=self.analyzer,
                                   durable=config.durable)
        self.engine = SearchEngine(self.store)
        self.lsp_sessions = [LazyLspSession(c) for c in config.lsp]
        self.tools: ToolRegistry = build_registry(
            self.engine, self.lsp_sessions[0] if self.lsp_sessions else None)
        self._pool = ThreadPoolExecutor(max_workers=config.ingest_workers,
                                        thread_name_prefix="ingest")
        self._upload_lock = threading.Lock()
        self._active: dict[str, Future] = {}

    def upload(self, request: UploadRequest) -> tuple[str, bool, Future]:
        """Register an upload and queue its processing; returns immediately."""
        extractor = extractor_for(request.filename)
        request.validate()
        with self._upload_lock:
            doc_id = compute_doc_id(request.filename)
            running = self._active.get(doc_id)
            if running is not None and not running.done():
                raise IngestInProgress(doc_id)
            doc_id, replaced = begin_ingest(request, self.store)
            fut = self._pool.submit(run_ingest, doc_id, request, extractor, self.store)
            self._active[doc_id] = fut
        return doc_id, replaced, fut

    def ingest(self, request: UploadRequest) -> str:
        doc_id, _, fut = self.upload(request)
        fut.result()
        return doc_id

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        for s in self.lsp_sessions:
            s.close()
        self.store.close()

    def __enter__(self) -> "GroundingService":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def _parse_search_body(body: Any) -> SearchQuery:
    if not isinstance(body, dict):
        raise ValueError("body must be a JSON object")
    query = body.get("query")
    if not isinstance(query, str) or not query.strip():
        raise ValueError("'query' must be a non-empty string")
    max_results = body.get("max_results", 10)
    if isinstance(max_results, bool) or not isinstance(max_results, int) or max_results < 1:
        raise ValueError("'max_results' must be a positive integer")
    doc_ids = body.get("doc_ids")
    if doc_ids is not None:
        if not isinstance(doc_ids, list) or not all(isinstance(d, str) for d in doc_ids):
            raise ValueError("'doc_ids' must be a list of strings")
        doc_ids = frozenset(doc_ids)
    return SearchQuery(query, max_results, doc_ids)


def _truthy(value: Optional[str]) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes", "on")


def create_app(service: GroundingService) -> FastAPI:
    app = FastAPI(title="groundsearch", version="0.1.0")
    token = service.config.token

    @app.middleware("http")
    async def bearer_auth(request: Request, call_next):
        if token and request.headers.get("authorization") != f"Bearer {token}":
            return _error(401, "missing or invalid bearer token")
        return await call_next(request)

    @app.post("/search")
    async def search(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return _error(400, "body is not valid JSON")
        try:
            query = _parse_search_body(body)
        except ValueError as exc:
            return _error(400, str(exc))
        tier, results = await run_in_threadpool(service.engine.run, query)
        return response_payload(tier, results)

    @app.post("/documents", status_code=202)
    async def upload(request: Request):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > MAX_UPLOAD_BYTES + 64 * 1024:
            return _error(413, f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
        ctype = request.headers.get("content-type", "")
        markdown = _truthy(request.query_params.get("markdown_mode"))
        if ctype.startswith("multipart/form-data"):
            form = await request.form()
            upload_file = form.get("file")
            if upload_file is None or isinstance(upload_file, str):
                return _error(400, "multipart upload needs a 'file' part")
            filename = request.query_params.get("filename") or upload_file.filename or ""
            data = await upload_file.read()
            markdown = markdown or _truthy(form.get("markdown_mode"))
        else:
            filename = request.query_params.get("filename") or request.headers.get("x-filename", "")
            chunks = []
            size = 0
            async for piece in request.stream():
                size += len(piece)
                if size > MAX_UPLOAD_BYTES:
                    return _error(413, f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
                chunks.append(piece)
            data = b"".join(chunks)
        if not filename:
            return _error(400, "a filename is required")
        if len(data) > MAX_UPLOAD_BYTES:
            return _error(413, f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
        try:
            doc_id, replaced, _ = await run_in_threadpool(
                service.upload, UploadRequest(filename, data, markdown))
        except ExtractionError as exc:
            return _error(422, str(exc))
        except IngestInProgress as exc:
            return _error(409, f"document {exc} is still being ingested")
        body: dict[str, Any] = {"doc_id": doc_id, "status": DocStatus.PROCESSING.value}
        if replaced:
            body["replaced"] = True
            body["warning"] = "a document with the same filename was replaced"
        return JSONResponse(body, status_code=202)

    @app.get("/documents/{doc_id}")
    async def get_document(doc_id: str):
        doc = service.store.get_document(doc_id)
        if doc is None:
            return _error(404, f"unknown document {doc_id}")
        return doc.to_dict()

    @app.get("/tools")
    async def tools():
        return [d.to_dict() for d in service.tools.descriptors()]

    return app
