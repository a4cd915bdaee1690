import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_skill_dict
from groundsearch.ingest import UploadRequest
from groundsearch.skills import (MissingTools, SkillHalted, SkillLoadError, SkillParseError,
                                 SkillRegistry, SkillRunner, TemplateExecutor, builtin_skills_dir,
                                 load_skills, parse_skill_json, parse_skill_text, select_skill)
from groundsearch.skills.runner import harvest_keywords
from groundsearch.tools import SEARCH_DESCRIPTOR, ToolRegistry

# three single-topic documents: each expansion line reaches one more of them
CORPUS = {
    "sync.txt": "Primary and secondary synchronization signals mark slot boundaries. " * 4,
    "modulation.txt": "Modulation schemes such as QPSK and 16QAM map bits onto symbols. " * 4,
    "timing.txt": "Timing recovery loops track the symbol clock of the receiver. " * 4,
}

# hand walk over CORPUS with query "design synchronization signals":
#   iteration 0 "design synchronization signals"                  -> sync            (1 doc)
#   iteration 1 "design synchronization signals modulation schemes" -> +modulation   (2 docs)
#   iteration 2 "design synchronization signals timing recovery"  -> +timing         (3 docs, stop)
GOLDEN_SEQUENCE = [
    "expand_query",
    "search_references", "search_references", "search_references",
    "aggregate_references", "research_plan", "implementation_plan", "coding_policies",
    "plan_gate", "generate_code",
]


class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        self.t += 1.0
        return self.t


@pytest.fixture
def corpus_service(service):
    for name, text in CORPUS.items():
        service.ingest(UploadRequest(name, text.encode()))
    return service


def builtin():
    return load_skills(builtin_skills_dir())


def fake_tools(results_per_call=None):
    """search_internal returning a fresh document per call (or scripted lists)."""
    calls = []

    def search_internal(query, max_results=10, doc_ids=None):
        calls.append(query)
        docs = (results_per_call[len(calls) - 1] if results_per_call is not None
                else [f"doc{len(calls)}"])
        return {"tier": "any", "results": [
            {"doc_id": d, "filename": f"{d}.txt", "score": 1.0, "pages": [1],
             "snippets": [{"page": 1, "text": f"{d} carrier offset estimation"}],
             "figures": [], "tables": []} for d in docs]}

    reg = ToolRegistry()
    reg.register(SEARCH_DESCRIPTOR, search_internal)
    return reg, calls


def test_builtin_loads():
    reg = builtin()
    assert reg.names() == ["research-code"] and reg.diagnostics == []
    skill = reg["research-code"]
    assert skill.policy_map["numerics"] == "numpy, scipy"
    assert skill.step("search_references").condition.threshold == 3


def test_research_code_golden(corpus_service):
    skill = builtin()["research-code"]
    runner = SkillRunner(corpus_service.tools, TemplateExecutor(), Clock())
    t = runner.execute(skill, "design synchronization signals")
    assert t.status == "completed"
    assert t.step_sequence() == GOLDEN_SEQUENCE
    iters = [r for r in t.step_records if r.step == "search_references"]
    assert [r.iteration for r in iters] == [0, 1, 2]
    assert [r.inputs for r in iters] == [
        "design synchronization signals",
        "design synchronization signals modulation schemes",
        "design synchronization signals timing recovery"]
    assert sorted(r["filename"] for r in t.final_outputs["references"]) == sorted(CORPUS)
    plan_idx = t.step_sequence().index("research_plan")
    code_idx = t.step_sequence().index("generate_code")
    assert t.step_records[plan_idx].output.strip() and plan_idx < code_idx
    assert "timing.txt" in t.final_outputs["research_plan"]
    assert set(t.final_outputs) >= {"research_plan", "implementation_plan", "coding_policies",
                                    "code", "references", "policies"}
    assert [r.started for r in t.step_records] == sorted(r.started for r in t.step_records)


def test_replay_determinism(corpus_service):
    skill = builtin()["research-code"]
    runs = [SkillRunner(corpus_service.tools, TemplateExecutor(), Clock())
            .execute(skill, "design synchronization signals").to_dict() for _ in range(2)]
    assert json.dumps(runs[0], sort_keys=True) == json.dumps(runs[1], sort_keys=True)


def test_select_skill():
    reg = builtin()
    assert select_skill(reg, "design and simulate synchronization signals").name == "research-code"
    assert select_skill(reg, "what is the weather") is None
    assert select_skill(SkillRegistry(), "simulate") is None
    a = parse_skill_text("name: zeta\ntriggers: simulate\n[step s]\nkind: synthesize\ninput: x\n")
    b = parse_skill_text("name: alpha\ntriggers: simulate\n[step s]\nkind: synthesize\ninput: x\n")
    assert select_skill(SkillRegistry({"zeta": a, "alpha": b}), "simulate it").name == "alpha"


GATE_SKILL = """name: gated
triggers: x
[step research_plan]
kind: synthesize
output: research_plan
input: plan for {query}
[step gate]
kind: gate
requires: research_plan
[step code]
kind: synthesize
requires: research_plan
output: code
input: code
"""


def test_gate_halts_on_empty_output():
    skill = parse_skill_text(GATE_SKILL)

    def executor(step, prompt, ctx):
        return "" if step.name == "research_plan" else prompt

    reg, _ = fake_tools()
    with pytest.raises(SkillHalted) as exc:
        SkillRunner(reg, executor, Clock()).execute(skill, "q")
    t = exc.value.transcript
    assert exc.value.step == "gate" and t.status == "halted" and t.halted_at == "gate"
    assert t.step_sequence() == ["research_plan", "gate"]
    assert t.step_records[-1].error == "empty outputs: research_plan"


def test_gate_passes():
    reg, _ = fake_tools()
    t = SkillRunner(reg, TemplateExecutor(), Clock()).execute(parse_skill_text(GATE_SKILL), "q")
    assert t.step_sequence() == ["research_plan", "gate", "code"]
    assert t.final_outputs["code"] == "code"


def iterate_skill(max_it, until):
    return parse_skill_text(f"""name: it
[step loop]
kind: iterate_until
tool: search_internal
input: {{query}} {{keywords}}
max_iterations: {max_it}
until: {until}
""")


def test_iteration_bound_exact():
    reg, calls = fake_tools([[]] * 10)
    t = SkillRunner(reg, clock=Clock()).execute(iterate_skill(3, "min_documents 99"), "q")
    assert [r.iteration for r in t.step_records] == [0, 1, 2] and len(calls) == 3


def test_min_documents_stops_early():
    reg, calls = fake_tools()
    SkillRunner(reg, clock=Clock()).execute(iterate_skill(6, "min_documents 2"), "q")
    assert len(calls) == 2


def test_no_new_results_rule():
    reg, calls = fake_tools([["a"], ["a", "b"], ["b"], ["c"]])
    SkillRunner(reg, clock=Clock()).execute(iterate_skill(6, "no_new_results"), "q")
    assert len(calls) == 3


def test_keywords_feed_later_iterations():
    reg, calls = fake_tools([["a"], ["b"]])
    SkillRunner(reg, clock=Clock()).execute(iterate_skill(2, "min_documents 9"), "carrier")
    assert calls[0] == "carrier"
    assert calls[1] == "carrier estimation offset"  # "a" is a stopword
    assert harvest_keywords([{"results": [{"doc_id": "d", "snippets": [
        {"text": "the 38 SSB ssb block block block"}]}]}], exclude={"block"}) == ["ssb"]


def test_missing_tool_detected_before_running():
    skill = iterate_skill(2, "no_new_results")
    with pytest.raises(MissingTools) as exc:
        SkillRunner(ToolRegistry()).execute(skill, "q")
    assert exc.value.missing == ["search_internal"]


def failing_tools():
    def search_internal(query, **kw):
        raise RuntimeError("backend down")
    reg = ToolRegistry()
    reg.register(SEARCH_DESCRIPTOR, search_internal)
    return reg


def test_tool_error_policy():
    text = """name: t
on_error: {}
[step call]
kind: tool_call
tool: search_internal
input: {{query}}
[step after]
kind: synthesize
input: done
"""
    with pytest.raises(SkillHalted) as exc:
        SkillRunner(failing_tools()).execute(parse_skill_text(text.format("halt")), "q")
    assert exc.value.transcript.step_records[0].error == "RuntimeError: backend down"
    t = SkillRunner(failing_tools()).execute(parse_skill_text(text.format("continue")), "q")
    assert t.step_sequence() == ["call", "after"] and t.status == "completed"


def test_registry_not_mutated(corpus_service):
    reg = builtin()
    before = dict(reg.skills)
    SkillRunner(corpus_service.tools).execute(reg["research-code"], "design signals")
    assert reg.skills == before


# -- loading -------------------------------------------------------------------

def test_parse_diagnostics_have_lines():
    bad = """name: bad
[step a]
kind: synthesize
requires: b
input: {query}
[step b]
kind: dance
"""
    with pytest.raises(SkillParseError) as exc:
        parse_skill_text(bad, "bad.skill")
    msgs = {(d.line, d.message) for d in exc.value.diagnostics}
    assert (4, "step 'a' requires 'b', a later step") in msgs
    assert (7, "unknown step kind 'dance'") in msgs


def test_template_field_validation():
    with pytest.raises(SkillParseError, match="not a builtin"):
        parse_skill_text("name: x\n[step a]\nkind: synthesize\ninput: {nope}\n")


def test_hash_only_comment_in_column_zero():
    skill = parse_skill_text("# header comment\nname: c\n[step a]\nkind: synthesize\n"
                             "input: first\n  # kept line\n# dropped\n")
    assert skill.step("a").input_template == "first\n# kept line"


def test_load_directory(tmp_path):
    (tmp_path / "one.skill").write_text(GATE_SKILL)
    (tmp_path / "two.json").write_text(json.dumps(random_skill_dict(random.Random(1))))
    (tmp_path / "broken.skill").write_text("name: broken\n")
    (tmp_path / "notes.txt").write_text("ignored")
    reg = load_skills(tmp_path)
    assert len(reg) == 2
    assert [d.path.endswith("broken.skill") for d in reg.diagnostics] == [True]
    (tmp_path / "dup.skill").write_text(GATE_SKILL)
    with pytest.raises(SkillLoadError, match="duplicate"):
        load_skills(tmp_path)
    with pytest.raises(SkillLoadError):
        load_skills(tmp_path / "missing")


def test_json_equivalent_to_text():
    text = parse_skill_text(GATE_SKILL, "s")
    as_json = parse_skill_json(json.dumps({
        "name": "gated", "triggers": ["x"],
        "steps": [
            {"name": "research_plan", "kind": "synthesize", "output": "research_plan",
             "input": "plan for {query}"},
            {"name": "gate", "kind": "gate", "requires": ["research_plan"]},
            {"name": "code", "kind": "synthesize", "requires": ["research_plan"],
             "output": "code", "input": "code"}]}), "s")
    assert text == as_json


# -- properties ------------------------------------------------------------------

def check_code_after_gate(t):
    seq = t.step_sequence()
    produces = [r.produces for r in t.step_records]
    if "code" in produces:
        assert "gate" in seq and seq.index("gate") < produces.index("code")
    return seq


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_code_after_plan_random(seed):
    rng = random.Random(seed)
    skill = parse_skill_json(json.dumps(random_skill_dict(rng)))
    empty = {s.name for s in skill.steps if rng.random() < 0.2}

    def executor(step, prompt, ctx):
        return "" if step.name in empty else prompt

    reg, _ = fake_tools([[f"d{rng.randint(0, 5)}"] for _ in range(64)])
    try:
        t = SkillRunner(reg, executor, Clock()).execute(skill, "q")
    except SkillHalted as exc:
        t = exc.transcript
        assert "code" not in t.step_sequence()
    seq = check_code_after_gate(t)
    order = [s.name for s in skill.steps]
    assert seq == sorted(seq, key=order.index)  # iterations contiguous, order kept
