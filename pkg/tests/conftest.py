import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from groundsearch.analyzer import Analyzer, Token  # noqa: E402
from groundsearch.index import InvertedIndex  # noqa: E402
from groundsearch.service import GroundingService, ServiceConfig  # noqa: E402
from groundsearch.store import DocumentStore  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def toks(text: str) -> list[Token]:
    """Whitespace tokens with positions, for index tests that skip the analyzer."""
    return [Token(w, i, 0) for i, w in enumerate(text.split())]


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def store(tmp_path):
    st = DocumentStore(tmp_path / "store", index=InvertedIndex(), analyzer=Analyzer(),
                       durable=False)
    yield st
    st.close()


@pytest.fixture
def service(tmp_path):
    svc = GroundingService(ServiceConfig(tmp_path / "data", durable=False))
    yield svc
    svc.close()


def random_corpus(rng: random.Random, max_chunks=50, max_tokens=40, vocab="abcdefgh"):
    """chunk_ref -> [(term, position)], positions with occasional stopword gaps."""
    corpus = {}
    for i in range(rng.randint(1, max_chunks)):
        pos = 0
        seq = []
        for _ in range(rng.randint(1, max_tokens)):
            if rng.random() < 0.1:
                pos += 1  # simulated removed stopword
            seq.append((rng.choice(vocab), pos))
            pos += 1
        corpus[f"c{i:03d}"] = seq
    return corpus


def random_query(rng: random.Random, corpus, vocab="abcdefgh"):
    """Either a slice of an indexed chunk (so phrases hit) or random terms."""
    if rng.random() < 0.5:
        seq = rng.choice(list(corpus.values()))
        start = rng.randrange(len(seq))
        length = rng.randint(1, 4)
        piece = seq[start:start + length]
        return [(t, p - piece[0][1]) for t, p in piece]
    return [(rng.choice(vocab + "xyz"), i) for i in range(rng.randint(1, 4))]


def build_index(corpus) -> InvertedIndex:
    ix = InvertedIndex()
    for ref, seq in corpus.items():
        ix.add_chunk(ref, [Token(t, p, 0) for t, p in seq])
    return ix


def write_fixture(path: Path, filename: str, pages: list[dict]) -> bytes:
    data = json.dumps({"filename": filename, "pages": pages}).encode()
    path.write_bytes(data)
    return data


def random_skill_dict(rng: random.Random) -> dict:
    """A valid skill with a gate somewhere before a code-producing step."""
    steps = []
    names = []
    n_before = rng.randint(1, 6)
    for i in range(n_before):
        kind = rng.choice(["synthesize", "synthesize", "tool_call", "iterate_until"])
        name = f"s{i}"
        req = rng.sample(names, rng.randint(0, min(2, len(names))))
        step = {"name": name, "kind": kind, "requires": req,
                "input": "{query} " + " ".join("{%s}" % r for r in req)}
        if kind in ("tool_call", "iterate_until"):
            step["tool"] = "search_internal"
        if kind == "iterate_until":
            step["max_iterations"] = rng.randint(1, 4)
            step["until"] = rng.choice(["no_new_results", f"min_documents {rng.randint(1, 5)}"])
            step["input"] = "{query} {keywords}"
        if rng.random() < 0.5:
            step["output"] = f"plan{i}"
        steps.append(step)
        names.append(name)
    gate_req = rng.sample(names, rng.randint(1, len(names)))
    steps.append({"name": "gate", "kind": "gate", "requires": gate_req})
    names.append("gate")
    for j in range(rng.randint(0, 2)):
        steps.append({"name": f"after{j}", "kind": "synthesize", "input": "{query} post"})
    steps.append({"name": "code", "kind": "synthesize", "requires": gate_req,
                  "output": "code", "input": "code for {query}"})
    return {"name": f"rand{rng.randrange(10**6)}", "description": "random",
            "triggers": ["random"], "on_error": rng.choice(["halt", "continue"]),
            "policies": {"logging": "json"}, "steps": steps}


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:  # file order is criterion order
            terminalreporter.write_line(line)
