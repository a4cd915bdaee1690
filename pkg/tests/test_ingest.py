import json

import pytest
from hypothesis import given, settings, strategies as st

from groundsearch.extractors import (ExtractedPage, ExtractionError, FixtureExtractor, RawFigure,
                                     RawTable, TextExtractor, extractor_for, page_from_json)
from groundsearch.ingest import (MAX_UPLOAD_BYTES, PayloadTooLarge, UploadRequest, chunk_page,
                                 compute_doc_id, extract_figures, extract_tables, figure_caption,
                                 ingest_document, plan_processing, table_to_markdown,
                                 thread_executor)
from groundsearch.records import DocStatus

# recorded with coreutils md5sum before the implementation existed
GOLDEN_IDS = {
    "paper.pdf": "98deb932360076cb8d052781c1cc2138",
    "Paper.pdf": "1e0beceeffe2b62352afd4291e0fd937",
    "TS 38.331 v17.pdf": "e761060edbeb3acd7779fcf5bc5b6a1b",
}


@pytest.mark.parametrize("name", sorted(GOLDEN_IDS))
def test_doc_id_golden(name):
    assert compute_doc_id(name) == GOLDEN_IDS[name]


def test_doc_id_rules():
    assert compute_doc_id("x.pdf") == compute_doc_id("x.pdf")
    assert compute_doc_id("Paper.pdf") != compute_doc_id("paper.pdf")
    with pytest.raises(ValueError):
        compute_doc_id("")


def test_plan():
    assert plan_processing(49).mode == "sequential"
    p = plan_processing(120, cpu_count=4)
    assert p.mode == "parallel" and len(p.ranges) == 24 and p.workers == 4
    assert all(b - a == 4 for a, b in p.ranges)
    p = plan_processing(52, cpu_count=64)
    assert [b - a + 1 for a, b in p.ranges] == [5] * 10 + [2]
    assert p.workers == 11
    with pytest.raises(ValueError):
        plan_processing(0)


@pytest.mark.parametrize("length,sizes", [
    (80, []), (99, []), (100, [100]), (3000, [3000]), (3001, [3000]),
    (3050, [3000]), (6150, [3000, 3000, 150]), (9000, [3000, 3000, 3000]),
])
def test_chunk_sizes(length, sizes):
    text = "".join(chr(ord("a") + i % 26) for i in range(length))
    chunks = chunk_page(ExtractedPage(4, text), "d")
    assert [len(c.text) for c in chunks] == sizes
    assert [c.char_start for c in chunks] == [3000 * i for i in range(len(sizes))]
    assert [c.chunk_id for c in chunks] == [f"d:4:{i}" for i in range(len(sizes))]


@settings(max_examples=200)
@given(st.text(max_size=10000))
def test_chunk_reconstruction(text):
    chunks = chunk_page(ExtractedPage(1, text), "d")
    joined = "".join(c.text for c in chunks)
    assert text.startswith(joined)
    assert len(text) - len(joined) < 100 or len(text) % 3000 == 0
    for c in chunks:
        assert 100 <= len(c.text) <= 3000
        assert text[c.char_start:c.char_start + len(c.text)] == c.text


def fig(w, h, bbox=(100, 100, 300, 250), near=()):
    return RawFigure(bbox, w, h, list(near))


def test_small_figures_dropped():
    page = ExtractedPage(1, "", [fig(99, 200), fig(200, 99), fig(100, 100), fig(640, 480)])
    got = extract_figures(page, "d")
    assert [f.figure_id for f in got] == ["d:1:0", "d:1:1"]


def test_caption_distance():
    below = ("Figure 1: SSB burst", (100, 300, 300, 312))  # 50 below the bottom edge
    far = ("Unrelated paragraph", (100, 400, 300, 412))  # 150 below
    edge = ("Exactly at limit", (100, 350, 300, 360))  # 100 below
    assert figure_caption(fig(200, 200, near=[below, far])) == "Figure 1: SSB burst"
    assert figure_caption(fig(200, 200, near=[far])) == ""
    assert figure_caption(fig(200, 200, near=[edge, below])) == "Figure 1: SSB burst Exactly at limit"
    side = ("Left label", (-60, 150, -1, 160))  # 101 left of x0
    assert figure_caption(fig(200, 200, near=[side])) == ""


def test_table_markdown():
    assert table_to_markdown(RawTable([["a", "b"], ["c", "d"]])) == "a | b\nc | d"
    assert table_to_markdown(RawTable([["x"]])) == "x"
    assert table_to_markdown(RawTable([["p|q", "r"]])) == "p\\|q | r"
    assert table_to_markdown(RawTable([["a", "b"], ["c"]])) == "a | b\nc | "
    with pytest.raises(ValueError):
        table_to_markdown(RawTable([]))


def test_extract_tables_skips_empty():
    page = ExtractedPage(2, "", tables=[RawTable([]), RawTable([["h"], ["v"]], "T1")])
    got = extract_tables(page, "d")
    assert len(got) == 1 and got[0].table_id == "d:2:0" and got[0].caption == "T1"


def test_extractor_dispatch():
    assert isinstance(extractor_for("a.TXT"), TextExtractor)
    assert isinstance(extractor_for("a.json"), FixtureExtractor)
    with pytest.raises(ExtractionError):
        extractor_for("a.pdf")


def test_text_extractor_pages():
    data = "one\ftwo\fthree".encode()
    ex = TextExtractor()
    assert ex.page_count(data, "x.txt") == 3
    assert [p.text for p in ex.extract_pages(data, "x.txt", 2, 3)] == ["two", "three"]
    with pytest.raises(ExtractionError):
        ex.page_count(b"\xff\xfe", "x.txt")


def test_fixture_extractor(fixtures_dir):
    data = (fixtures_dir / "figures_tables.json").read_bytes()
    ex = FixtureExtractor()
    pages = ex.extract_pages(data, "f.json", 1, ex.page_count(data, "f.json"))
    assert [p.page_number for p in pages] == [1, 2]
    with pytest.raises(ExtractionError):
        ex.page_count(json.dumps({"pages": [{"page_number": 2}]}).encode(), "f.json")
    assert page_from_json({"page_number": 3}).text == ""


def test_oversize_rejected_before_extraction(store):
    class Exploding:
        def page_count(self, *a):
            raise AssertionError("extractor must not run")

    req = UploadRequest("big.txt", b"\0" * (MAX_UPLOAD_BYTES + 1))
    with pytest.raises(PayloadTooLarge):
        ingest_document(req, Exploding(), store)
    assert store.list_documents() == []
    UploadRequest("ok.txt", b"\0" * MAX_UPLOAD_BYTES).validate()


def page_text(n):
    return f"Page {n} discusses timing recovery and ssb periodicity. " * (8 + n % 5)


def test_sequential_ingest(store):
    data = "\f".join(page_text(n) for n in range(1, 11)).encode()
    doc_id = ingest_document(UploadRequest("ten.txt", data), TextExtractor(), store)
    doc = store.get_document(doc_id)
    assert doc.status is DocStatus.INDEXED and doc.total_pages == 10
    assert len(store.chunks(doc_id)) == 10
    assert store.integrity_violations() == []


def test_failure_leaves_no_records(store):
    class FailsOnPage3(TextExtractor):
        def extract_pages(self, data, filename, first, last, markdown_mode=False):
            if first <= 3 <= last:
                raise ExtractionError("page 3 unreadable")
            return super().extract_pages(data, filename, first, last, markdown_mode)

    data = "\f".join(page_text(n) for n in range(1, 60)).encode()
    doc_id = ingest_document(UploadRequest("bad.txt", data), FailsOnPage3(), store,
                             executor_factory=thread_executor)
    doc = store.get_document(doc_id)
    assert doc.status is DocStatus.FAILED and "page 3 unreadable" in doc.failure_reason
    assert store.chunks(doc_id) == [] and len(store.index) == 0


def test_replace_semantics(store):
    ex = TextExtractor()
    first = ingest_document(UploadRequest("r.txt", page_text(1).encode()), ex, store)
    old = {c.text for c in store.chunks(first)}
    second = ingest_document(UploadRequest("r.txt", (page_text(2) * 2).encode()), ex, store)
    assert first == second
    assert {c.text for c in store.chunks(second)} != old
    assert store.integrity_violations() == []
