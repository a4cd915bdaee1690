"""Agent-facing tool descriptors and the registry that binds them to callables."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from groundsearch.search import SearchEngine, SearchQuery, response_payload

SEARCH_GUIDANCE = (
    "Call search_internal first for queries related to internal systems, APIs, or "
    "proprietary data; the ingested documents are authoritative for those topics."
)
LSP_GUIDANCE = (
    "Use LSP tools for questions about code structure, definitions, or references. "
    "Fall back to plain text search for loose pattern matching or when no language "
    "server is configured."
)


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    parameters: dict[str, Any]
    usage_guidance: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "description": self.description,
                "parameters": self.parameters, "usage_guidance": self.usage_guidance}

    @property
    def primary_parameter(self) -> Optional[str]:
        required = self.parameters.get("required") or []
        return required[0] if required else None


@dataclass
class Tool:
    descriptor: ToolDescriptor
    func: Callable[..., Any]


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, Tool] = {}

    def register(self, descriptor: ToolDescriptor, func: Callable[..., Any]) -> None:
        if descriptor.name in self._tools:
            raise ValueError(f"tool {descriptor.name!r} already registered")
        self._tools[descriptor.name] = Tool(descriptor, func)

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def names(self) -> list[str]:
        return list(self._tools)

    def descriptors(self) -> list[ToolDescriptor]:
        return [t.descriptor for t in self._tools.values()]

    def get(self, name: str) -> Tool:
        try:
            return self._tools[name]
        except KeyError:
            raise KeyError(f"unknown tool {name!r}") from None

    def call(self, name: str, *args: Any, **kwargs: Any) -> Any:
        return self.get(name).func(*args, **kwargs)

    def system_prompt(self) -> str:
        """Guidance lines for an agent's system prompt, one per distinct text."""
        seen: list[str] = []
        for d in self.descriptors():
            if d.usage_guidance and d.usage_guidance not in seen:
                seen.append(d.usage_guidance)
        return "\n".join(seen)


SEARCH_DESCRIPTOR = ToolDescriptor(
    name="search_internal",
    description="Search the organization's uploaded technical documents (standards, "
                "papers, manuals) and return matching pages, snippets, figures and tables.",
    parameters={
        "type": "object",
        "properties": {
            "query": {"type": "string", "description": "Keywords or a phrase to look up."},
            "max_results": {"type": "integer", "minimum": 1, "default": 10},
            "doc_ids": {"type": "array", "items": {"type": "string"},
                        "description": "Restrict the search to these documents."},
        },
        "required": ["query"],
    },
    usage_guidance=SEARCH_GUIDANCE,
)


def search_tool(engine: SearchEngine) -> Callable[..., dict[str, Any]]:
    def search_internal(query: str, max_results: int = 10,
                        doc_ids: Optional[list[str]] = None) -> dict[str, Any]:
        q = SearchQuery(query, max_results, frozenset(doc_ids) if doc_ids is not None else None)
        return response_payload(*engine.run(q))
    return search_internal


def _lsp_params(extra: Optional[dict] = None) -> dict[str, Any]:
    props: dict[str, Any] = {
        "symbol": {"type": "string", "description": "Identifier to look up."},
        "file_path": {"type": "string",
                      "description": "File to search for the symbol (workspace-relative)."},
        "line": {"type": "integer", "minimum": 0},
        "character": {"type": "integer", "minimum": 0},
    }
    props.update(extra or {})
    return {"type": "object", "properties": props, "required": ["symbol"]}


LSP_DESCRIPTORS = (
    ToolDescriptor("lsp_definition",
                   "Locate the definition of a symbol using the language server.",
                   _lsp_params(), LSP_GUIDANCE),
    ToolDescriptor("lsp_references",
                   "List every reference to a symbol across the codebase.",
                   _lsp_params({"include_declaration": {"type": "boolean", "default": False}}),
                   LSP_GUIDANCE),
    ToolDescriptor("document_symbols",
                   "Outline the symbols (classes, functions, ...) defined in a file.",
                   {"type": "object",
                    "properties": {"file_path": {"type": "string"}},
                    "required": ["file_path"]},
                   LSP_GUIDANCE),
)


class LazyLspSession:
    """Start the language server on first use; one session per workspace."""

    def __init__(self, config):
        self.config = config
        self._session = None
        self._lock = threading.Lock()

    def get(self):
        from groundsearch.lsp_bridge import start_session
        with self._lock:
            if self._session is None:
                self._session = start_session(self.config)
            return self._session

    def close(self) -> None:
        with self._lock:
            if self._session is not None:
                self._session.close()
                self._session = None


def lsp_tools(lazy: LazyLspSession) -> dict[str, Callable[..., Any]]:
    from groundsearch import lsp_bridge

    def _where(session, symbol, file_path, line, character):
        if line is not None and character is not None:
            if file_path is None:
                raise ValueError("file_path is required with line/character")
            return session.resolve(file_path), (line, character)
        return session.find_symbol(symbol, file_path)

    def lsp_definition(symbol: str, file_path: Optional[str] = None,
                       line: Optional[int] = None, character: Optional[int] = None):
        session = lazy.get()
        path, pos = _where(session, symbol, file_path, line, character)
        return [loc.to_dict() for loc in lsp_bridge.lsp_definition(session, path, pos)]

    def lsp_references(symbol: str, file_path: Optional[str] = None,
                       line: Optional[int] = None, character: Optional[int] = None,
                       include_declaration: bool = False):
        session = lazy.get()
        path, pos = _where(session, symbol, file_path, line, character)
        return [loc.to_dict()
                for loc in lsp_bridge.lsp_references(session, path, pos, include_declaration)]

    def document_symbols(file_path: str):
        return [s.to_dict() for s in lsp_bridge.document_symbols(lazy.get(), file_path)]

    return {"lsp_definition": lsp_definition, "lsp_references": lsp_references,
            "document_symbols": document_symbols}


def build_registry(engine: Optional[SearchEngine] = None,
                   lsp: Optional[LazyLspSession] = None) -> ToolRegistry:
    registry = ToolRegistry()
    if engine is not None:
        registry.register(SEARCH_DESCRIPTOR, search_tool(engine))
    if lsp is not None:
        funcs = lsp_tools(lsp)
        for d in LSP_DESCRIPTORS:
            registry.register(d, funcs[d.name])
    return registry
