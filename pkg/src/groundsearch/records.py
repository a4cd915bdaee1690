"""Record types shared by ingestion, storage and search."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Optional


class DocStatus(str, Enum):
    UPLOADED = "uploaded"
    PROCESSING = "processing"
    INDEXED = "indexed"
    FAILED = "failed"


_NEXT_STATUS = {
    DocStatus.UPLOADED: {DocStatus.PROCESSING},
    DocStatus.PROCESSING: {DocStatus.INDEXED, DocStatus.FAILED},
    DocStatus.INDEXED: set(),
    DocStatus.FAILED: set(),
}


def can_transition(old: DocStatus, new: DocStatus) -> bool:
    return new in _NEXT_STATUS[old]


def _from_dict(cls, data: dict[str, Any]):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in data.items() if k in names})


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    filename: str
    upload_time: str  # RFC 3339, UTC
    total_pages: int = 0
    status: DocStatus = DocStatus.UPLOADED
    failure_reason: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", DocStatus(self.status))
        if (self.status is DocStatus.FAILED) != (self.failure_reason is not None):
            raise ValueError("failure_reason must be set exactly when status is failed")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["status"] = self.status.value
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DocumentRecord":
        return _from_dict(cls, data)


@dataclass(frozen=True)
class ChunkRecord:
    chunk_id: str
    parent_doc_id: str
    page_number: int
    char_start: int
    text: str
    text_processed: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ChunkRecord":
        return _from_dict(cls, data)


@dataclass(frozen=True)
class FigureRecord:
    figure_id: str
    parent_doc_id: str
    page_number: int
    caption: str = ""
    ocr_text: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FigureRecord":
        return _from_dict(cls, data)


@dataclass(frozen=True)
class TableRecord:
    table_id: str
    parent_doc_id: str
    page_number: int
    markdown: str
    caption: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.markdown:
            raise ValueError("table markdown must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TableRecord":
        return _from_dict(cls, data)


def record_id(doc_id: str, page: int, ordinal: int) -> str:
    return f"{doc_id}:{page}:{ordinal}"
