"""Language Server Protocol client over a child process's stdio.

Only what the code-search tools need: initialize/shutdown, lazy didOpen,
``textDocument/definition``, ``textDocument/references`` and
``textDocument/documentSymbol``. Server-initiated requests get empty answers.
"""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
import threading
import time
from concurrent.futures import Future, TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence
from urllib.parse import unquote, urlparse

logger = logging.getLogger(__name__)

Position = tuple[int, int]

REQUIRED_CAPABILITIES = ("definitionProvider", "referencesProvider")


class LspError(RuntimeError):
    pass


class LspTimeout(LspError):
    def __init__(self, method: str, elapsed: float):
        super().__init__(f"{method} timed out after {elapsed:.2f}s")
        self.method = method
        self.elapsed = elapsed


class CapabilityError(LspError):
    def __init__(self, missing: Sequence[str]):
        super().__init__("server lacks capabilities: " + ", ".join(missing))
        self.missing = list(missing)


class ServerError(LspError):
    def __init__(self, method: str, error: dict):
        self.code = error.get("code")
        self.server_message = error.get("message", "")
        super().__init__(f"{method} failed ({self.code}): {self.server_message}")


# -- framing -----------------------------------------------------------------

def encode_message(payload: dict[str, Any]) -> bytes:
    body = json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return b"Content-Length: %d\r\n\r\n" % len(body) + body


class FramingError(LspError):
    pass


class MessageReader:
    """Incremental Content-Length frame decoder; feed it arbitrary byte slices."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._need: Optional[int] = None

    def feed(self, data: bytes) -> list[dict[str, Any]]:
        self._buf += data
        out = []
        while True:
            if self._need is None:
                end = self._buf.find(b"\r\n\r\n")
                if end < 0:
                    return out
                self._need = self._parse_headers(bytes(self._buf[:end]))
                del self._buf[:end + 4]
            if len(self._buf) < self._need:
                return out
            body = bytes(self._buf[:self._need])
            del self._buf[:self._need]
            self._need = None
            try:
                out.append(json.loads(body.decode("utf-8")))
            except ValueError as exc:
                raise FramingError(f"bad message body: {exc}") from exc

    @staticmethod
    def _parse_headers(raw: bytes) -> int:
        length = None
        for line in raw.decode("ascii", "replace").split("\r\n"):
            name, _, value = line.partition(":")
            if name.strip().lower() == "content-length":
                length = int(value.strip())
        if length is None or length < 0:
            raise FramingError(f"missing Content-Length in {raw!r}")
        return length


# -- domain types ------------------------------------------------------------

@dataclass
class ServerConfig:
    launch_command: list[str]
    root_path: str
    language_id: str
    initialize_timeout: float = 10.0
    request_timeout: float = 30.0

    def __post_init__(self) -> None:
        if not self.launch_command:
            raise ValueError("launch_command must not be empty")


@dataclass(frozen=True, order=True)
class SymbolLocation:
    file_path: str
    start: Position
    end: Position

    def to_dict(self) -> dict[str, Any]:
        return {"file_path": self.file_path,
                "start": {"line": self.start[0], "character": self.start[1]},
                "end": {"line": self.end[0], "character": self.end[1]}}


@dataclass
class DocumentSymbol:
    name: str
    kind: int
    start: Position
    end: Position
    children: list["DocumentSymbol"] = field(default_factory=list)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind,
                "range": {"start": list(self.start), "end": list(self.end)},
                "children": [c.to_dict() for c in self.children]}


def path_to_uri(path: str | Path) -> str:
    return Path(path).resolve().as_uri()


def uri_to_path(uri: str) -> str:
    parsed = urlparse(uri)
    if parsed.scheme != "file":
        return uri
    return unquote(parsed.path)


def _pos(obj: dict) -> Position:
    return (int(obj["line"]), int(obj["character"]))


def normalize_locations(result: Any) -> list[SymbolLocation]:
    """Location | Location[] | LocationLink[] | null -> list of SymbolLocation."""
    if result is None:
        return []
    items = result if isinstance(result, list) else [result]
    out = []
    for item in items:
        if "targetUri" in item:
            rng = item.get("targetSelectionRange") or item["targetRange"]
            uri = item["targetUri"]
        else:
            rng = item["range"]
            uri = item["uri"]
        out.append(SymbolLocation(uri_to_path(uri), _pos(rng["start"]), _pos(rng["end"])))
    return out


def normalize_symbols(result: Any) -> list[DocumentSymbol]:
    """Hierarchical DocumentSymbol[] kept as is; flat SymbolInformation[] -> one level."""
    if not result:
        return []

    def build(item: dict) -> DocumentSymbol:
        rng = item["location"]["range"] if "location" in item else item["range"]
        return DocumentSymbol(item["name"], int(item.get("kind", 0)), _pos(rng["start"]),
                              _pos(rng["end"]), [build(c) for c in item.get("children", ())])

    return [build(item) for item in result]


def utf16_column(line: str, index: int) -> int:
    return len(line[:index].encode("utf-16-le")) // 2


# -- session -----------------------------------------------------------------

class LspSession:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.root = Path(config.root_path).resolve()
        self.capabilities: dict[str, Any] = {}
        self._proc: Optional[subprocess.Popen] = None
        self._next_id = 0
        self._pending: dict[int, tuple[str, Future]] = {}
        self._state_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._opened: set[str] = set()
        self._reader: Optional[threading.Thread] = None
        self._closed = False

    # process plumbing

    def start(self) -> "LspSession":
        try:
            self._proc = subprocess.Popen(
                self.config.launch_command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, cwd=self.root, bufsize=0)
        except OSError as exc:
            raise LspError(f"cannot start {self.config.launch_command[0]!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"lsp-reader-{self.config.language_id}")
        self._reader.start()
        try:
            result = self.request("initialize", {
                "processId": os.getpid(),
                "rootUri": self.root.as_uri(),
                "rootPath": str(self.root),
                "workspaceFolders": [{"uri": self.root.as_uri(), "name": self.root.name}],
                "capabilities": {
                    "textDocument": {
                        "definition": {"linkSupport": True},
                        "references": {},
                        "documentSymbol": {"hierarchicalDocumentSymbolSupport": True},
                        "synchronization": {"didSave": False},
                    },
                    "workspace": {"configuration": True},
                },
            }, timeout=self.config.initialize_timeout)
            self.capabilities = (result or {}).get("capabilities", {})
            missing = [c for c in REQUIRED_CAPABILITIES if not self.capabilities.get(c)]
            if missing:
                raise CapabilityError(missing)
            self.notify("initialized", {})
        except BaseException:
            self.close(graceful=False)
            raise
        return self

    def _send(self, payload: dict[str, Any]) -> None:
        data = encode_message(payload)
        with self._write_lock:
            if self._proc is None or self._proc.stdin is None or self._closed:
                raise LspError("session is closed")
            try:
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise LspError(f"server pipe closed: {exc}") from exc

    def _read_loop(self) -> None:
        reader = MessageReader()
        fd = self._proc.stdout.fileno()
        try:
            while True:
                data = os.read(fd, 65536)
                if not data:
                    break
                for msg in reader.feed(data):
                    self._dispatch(msg)
        except (OSError, LspError) as exc:
            logger.warning("lsp reader stopped: %s", exc)
        finally:
            with self._state_lock:
                pending, self._pending = self._pending, {}
            for method, fut in pending.values():
                if not fut.done():
                    fut.set_exception(LspError(f"server exited before answering {method}"))

    def _dispatch(self, msg: dict[str, Any]) -> None:
        if "method" in msg and "id" in msg:
            self._answer_server_request(msg)
        elif "method" in msg:
            logger.debug("server notification %s", msg["method"])
        elif "id" in msg:
            with self._state_lock:
                entry = self._pending.pop(msg["id"], None)
            if entry is None:
                logger.debug("response for unknown id %r", msg["id"])
                return
            method, fut = entry
            if "error" in msg and msg["error"] is not None:
                fut.set_exception(ServerError(method, msg["error"]))
            else:
                fut.set_result(msg.get("result"))

    def _answer_server_request(self, msg: dict[str, Any]) -> None:
        result: Any = None
        if msg["method"] == "workspace/configuration":
            result = [None for _ in (msg.get("params") or {}).get("items", [])]
        try:
            self._send({"jsonrpc": "2.0", "id": msg["id"], "result": result})
        except LspError:
            pass

    # JSON-RPC

    def request(self, method: str, params: Any = None, timeout: Optional[float] = None) -> Any:
        fut: Future = Future()
        with self._state_lock:
            self._next_id += 1
            req_id = self._next_id
            self._pending[req_id] = (method, fut)
        started = time.monotonic()
        try:
            self._send({"jsonrpc": "2.0", "id": req_id, "method": method, "params": params})
            return fut.result(timeout=timeout if timeout is not None else self.config.request_timeout)
        except FutureTimeout:
            raise LspTimeout(method, time.monotonic() - started) from None
        finally:
            with self._state_lock:
                self._pending.pop(req_id, None)

    def notify(self, method: str, params: Any = None) -> None:
        self._send({"jsonrpc": "2.0", "method": method, "params": params})

    # documents

    def resolve(self, file_path: str | Path) -> Path:
        path = Path(file_path)
        if not path.is_absolute():
            path = self.root / path
        path = path.resolve()
        if path != self.root and self.root not in path.parents:
            raise ValueError(f"{file_path} is outside the workspace {self.root}")
        return path

    def ensure_open(self, file_path: str | Path) -> str:
        path = self.resolve(file_path)
        uri = path.as_uri()
        with self._state_lock:
            if uri in self._opened:
                return uri
            self._opened.add(uri)
        self.notify("textDocument/didOpen", {"textDocument": {
            "uri": uri, "languageId": self.config.language_id, "version": 1,
            "text": path.read_text("utf-8")}})
        return uri

    def _text_position(self, file_path, position: Position) -> dict[str, Any]:
        uri = self.ensure_open(file_path)
        return {"textDocument": {"uri": uri},
                "position": {"line": position[0], "character": position[1]}}

    def definition(self, file_path, position: Position) -> list[SymbolLocation]:
        return normalize_locations(
            self.request("textDocument/definition", self._text_position(file_path, position)))

    def references(self, file_path, position: Position,
                   include_declaration: bool = False) -> list[SymbolLocation]:
        params = self._text_position(file_path, position)
        params["context"] = {"includeDeclaration": include_declaration}
        return sorted(normalize_locations(self.request("textDocument/references", params)))

    def document_symbols(self, file_path) -> list[DocumentSymbol]:
        if not self.capabilities.get("documentSymbolProvider"):
            raise CapabilityError(["documentSymbolProvider"])
        uri = self.ensure_open(file_path)
        return normalize_symbols(
            self.request("textDocument/documentSymbol", {"textDocument": {"uri": uri}}))

    def find_symbol(self, name: str, file_path=None) -> tuple[Path, Position]:
        """First whole-word occurrence of ``name``, in one file or across the workspace."""
        pattern = re.compile(r"(?<![\w$])" + re.escape(name) + r"(?![\w$])")
        candidates = [self.resolve(file_path)] if file_path else self._workspace_files()
        for path in candidates:
            try:
                lines = path.read_text("utf-8").splitlines()
            except (OSError, UnicodeDecodeError):
                continue
            for lineno, line in enumerate(lines):
                m = pattern.search(line)
                if m:
                    return path, (lineno, utf16_column(line, m.start()))
        raise LookupError(f"symbol {name!r} not found")

    def _workspace_files(self) -> list[Path]:
        suffixes = _SUFFIXES.get(self.config.language_id, ())
        files = []
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
            for fn in sorted(filenames):
                if not suffixes or fn.endswith(suffixes):
                    files.append(Path(dirpath) / fn)
        return files

    # shutdown

    def close(self, graceful: bool = True, timeout: float = 5.0) -> None:
        proc = self._proc
        if proc is None or self._closed:
            return
        if graceful and proc.poll() is None:
            try:
                self.request("shutdown", None, timeout=timeout)
            except LspError as exc:
                logger.warning("shutdown request failed: %s", exc)
            try:
                self.notify("exit", None)
            except LspError:
                pass
        self._closed = True
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=timeout if graceful else 0.5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=5)
        if self._reader is not None:
            self._reader.join(timeout=2)
        if proc.stdout:
            proc.stdout.close()

    @property
    def returncode(self) -> Optional[int]:
        return self._proc.poll() if self._proc else None

    def __enter__(self) -> "LspSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_SUFFIXES = {
    "python": (".py",),
    "typescript": (".ts", ".tsx"),
    "javascript": (".js", ".jsx"),
    "c": (".c", ".h"),
    "cpp": (".cc", ".cpp", ".hpp", ".h"),
    "go": (".go",),
    "rust": (".rs",),
    "java": (".java",),
}


def start_session(config: ServerConfig) -> LspSession:
    return LspSession(config).start()


def lsp_definition(session: LspSession, file_path, position: Position) -> list[SymbolLocation]:
    return session.definition(file_path, position)


def lsp_references(session: LspSession, file_path, position: Position,
                   include_declaration: bool = False) -> list[SymbolLocation]:
    return session.references(file_path, position, include_declaration)


def document_symbols(session: LspSession, file_path) -> list[DocumentSymbol]:
    return session.document_symbols(file_path)


def definition_by_name(session: LspSession, symbol: str, file_path=None) -> list[SymbolLocation]:
    path, pos = session.find_symbol(symbol, file_path)
    return session.definition(path, pos)


def references_by_name(session: LspSession, symbol: str, file_path=None,
                       include_declaration: bool = False) -> list[SymbolLocation]:
    path, pos = session.find_symbol(symbol, file_path)
    return session.references(path, pos, include_declaration)
