"""Page extractors: turn an uploaded payload into per-page text, figures and tables.

Extractors are stateless and picklable; every call receives the raw payload,
so page ranges can be farmed out to worker processes.

Pre-extracted fixture format (UTF-8 JSON)::

    {
      "filename": "38331-excerpt.pdf",
      "pages": [
        {
          "page_number": 1,
          "text": "...",
          "figures": [
            {"bbox": [x0, y0, x1, y1], "width_px": 640, "height_px": 480,
             "nearby_texts": [{"text": "Figure 1: ...", "bbox": [x0, y0, x1, y1]}],
             "ocr_text": "optional"}
          ],
          "tables": [{"cells": [["h1", "h2"], ["a", "b"]], "caption": "optional"}]
        }
      ]
    }

Coordinates are page points with the origin at the top-left (y grows down).
``figures``, ``tables``, ``nearby_texts``, ``ocr_text`` and ``caption`` may be
omitted. ``page_number`` is 1-based and unique.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Protocol

Rect = tuple[float, float, float, float]


class ExtractionError(RuntimeError):
    pass


@dataclass
class RawFigure:
    bbox: Rect
    width_px: int
    height_px: int
    nearby_texts: list[tuple[str, Rect]] = field(default_factory=list)
    ocr_text: Optional[str] = None

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("figure pixel dimensions must be positive")


@dataclass
class RawTable:
    cells: list[list[str]]
    caption: Optional[str] = None
    page_number: int = 0

    def __post_init__(self) -> None:
        width = max((len(r) for r in self.cells), default=0)
        self.cells = [list(r) + [""] * (width - len(r)) for r in self.cells]


@dataclass
class ExtractedPage:
    page_number: int
    text: str
    figures: list[RawFigure] = field(default_factory=list)
    tables: list[RawTable] = field(default_factory=list)


class PageExtractor(Protocol):
    def page_count(self, data: bytes, filename: str) -> int: ...

    def extract_pages(self, data: bytes, filename: str, first: int, last: int,
                      markdown_mode: bool = False) -> list[ExtractedPage]:
        """Pages ``first..last`` inclusive, 1-based."""
        ...


class TextExtractor:
    """Plain text or markdown. Form feeds separate pages; otherwise one page."""

    def _pages(self, data: bytes) -> list[str]:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ExtractionError(f"payload is not valid UTF-8: {exc}") from exc
        return text.split("\f")

    def page_count(self, data: bytes, filename: str) -> int:
        return len(self._pages(data))

    def extract_pages(self, data, filename, first, last, markdown_mode=False):
        pages = self._pages(data)
        return [ExtractedPage(n, pages[n - 1]) for n in range(first, last + 1)]


def _rect(value) -> Rect:
    x0, y0, x1, y1 = (float(v) for v in value)
    return (x0, y0, x1, y1)


def page_from_json(obj: dict) -> ExtractedPage:
    page_number = int(obj["page_number"])
    figures = [
        RawFigure(
            bbox=_rect(f["bbox"]),
            width_px=int(f["width_px"]),
            height_px=int(f["height_px"]),
            nearby_texts=[(t["text"], _rect(t["bbox"])) for t in f.get("nearby_texts", [])],
            ocr_text=f.get("ocr_text"),
        )
        for f in obj.get("figures", [])
    ]
    tables = [
        RawTable([[str(c) for c in row] for row in t["cells"]], t.get("caption"), page_number)
        for t in obj.get("tables", [])
    ]
    return ExtractedPage(page_number, obj.get("text", ""), figures, tables)


class FixtureExtractor:
    """Reads the pre-extracted JSON fixture format documented above."""

    def _load(self, data: bytes) -> list[dict]:
        try:
            doc = json.loads(data.decode("utf-8"))
            pages = sorted(doc["pages"], key=lambda p: int(p["page_number"]))
        except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
            raise ExtractionError(f"malformed fixture: {exc}") from exc
        numbers = [int(p["page_number"]) for p in pages]
        if numbers != list(range(1, len(numbers) + 1)):
            raise ExtractionError("fixture page numbers must be 1..N without gaps")
        return pages

    def page_count(self, data: bytes, filename: str) -> int:
        return len(self._load(data))

    def extract_pages(self, data, filename, first, last, markdown_mode=False):
        pages = self._load(data)
        try:
            return [page_from_json(p) for p in pages[first - 1:last]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ExtractionError(f"malformed fixture page: {exc}") from exc


_BY_SUFFIX = {
    ".txt": TextExtractor,
    ".md": TextExtractor,
    ".markdown": TextExtractor,
    ".rst": TextExtractor,
    ".json": FixtureExtractor,
}


def extractor_for(filename: str) -> PageExtractor:
    """Pick an extractor by file suffix; raises ``ExtractionError`` if none fits."""
    lower = filename.lower()
    for suffix, cls in _BY_SUFFIX.items():
        if lower.endswith(suffix):
            return cls()
    raise ExtractionError(f"no extractor for {filename!r}")
