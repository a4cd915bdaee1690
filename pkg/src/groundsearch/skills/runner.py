"""Skill selection and execution."""

from __future__ import annotations

import json
import time
from collections import Counter
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol

from groundsearch.analyzer import Analyzer, AnalyzerConfig, tokenize
from groundsearch.skills.loader import SkillRegistry
from groundsearch.skills.model import Skill, Step, StepKind, StepRecord, Transcript
from groundsearch.tools import ToolRegistry

HARVEST_TOP_K = 5
CODE_OUTPUT = "code"


class SkillError(RuntimeError):
    pass


class MissingTools(SkillError):
    def __init__(self, skill: str, missing: list[str]):
        super().__init__(f"skill {skill!r} needs unavailable tools: {', '.join(missing)}")
        self.missing = missing


class SkillHalted(SkillError):
    def __init__(self, step: str, reason: str, transcript: Transcript):
        super().__init__(f"halted at {step!r}: {reason}")
        self.step = step
        self.reason = reason
        self.transcript = transcript


class StepExecutor(Protocol):
    def __call__(self, step: Step, prompt: str, context: Mapping[str, Any]) -> str: ...


class TemplateExecutor:
    """Deterministic synthesizer: the rendered template is the output."""

    def __call__(self, step: Step, prompt: str, context: Mapping[str, Any]) -> str:
        return prompt


def select_skill(registry: SkillRegistry, task_text: str,
                 analyzer: Optional[Analyzer] = None) -> Optional[Skill]:
    analyzer = analyzer or Analyzer()
    task = set(analyzer.terms(task_text))
    best: Optional[Skill] = None
    best_score = 0
    for skill in registry:  # sorted by name, so ties keep the first name
        hints = set()
        for hint in skill.trigger_hints:
            hints.update(analyzer.terms(hint))
        score = len(task & hints)
        if score > best_score:
            best, best_score = skill, score
    return best


def _result_docs(output: Any) -> list[dict[str, Any]]:
    if isinstance(output, dict) and isinstance(output.get("results"), list):
        return [r for r in output["results"] if isinstance(r, dict) and "doc_id" in r]
    return []


def render_output(output: Any) -> str:
    """Text form of a step output, as seen by later templates."""
    if output is None:
        return ""
    if isinstance(output, str):
        return output
    docs = _result_docs(output)
    if docs or (isinstance(output, dict) and "results" in output):
        lines = []
        for r in docs:
            pages = ", ".join(str(p) for p in r.get("pages", []))
            snippet = " ".join((r.get("snippets") or [{}])[0].get("text", "").split())
            lines.append(f"- {r.get('filename', r['doc_id'])} (pages {pages}): {snippet}")
        return "\n".join(lines)
    return json.dumps(output, sort_keys=True, ensure_ascii=False)


def harvest_keywords(outputs: Iterable[Any], exclude: Iterable[str] = (),
                     k: int = HARVEST_TOP_K, stopwords: frozenset[str] = AnalyzerConfig().stopwords
                     ) -> list[str]:
    """Most frequent non-stopword terms in result snippets, ties alphabetical."""
    skip = set(exclude) | stopwords
    counts: Counter[str] = Counter()
    for output in outputs:
        for r in _result_docs(output):
            for s in r.get("snippets", []):
                counts.update(t.text for t in tokenize(s.get("text", ""))
                              if t.text not in skip and not t.text.isdigit())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [term for term, _ in ranked[:k]]


class _Context(dict):
    def __missing__(self, key: str) -> Any:
        raise SkillError(f"template field {{{key}}} has no value")


class SkillRunner:
    def __init__(self, tools: ToolRegistry, step_executor: Optional[StepExecutor] = None,
                 clock: Callable[[], float] = time.time):
        self.tools = tools
        self.step_executor = step_executor or TemplateExecutor()
        self.clock = clock

    def check_tools(self, skill: Skill) -> None:
        missing = sorted({s.tool for s in skill.steps if s.tool and s.tool not in self.tools})
        if missing:
            raise MissingTools(skill.name, missing)

    def execute(self, skill: Skill, query: str) -> Transcript:
        self.check_tools(skill)
        transcript = Transcript(skill.name, query)
        texts: dict[str, str] = {}
        references: dict[str, dict[str, Any]] = {}
        policies = skill.policy_map
        for step in skill.steps:
            base = _Context(query=query, policies=policies, iteration=0, keywords="",
                            references=self._references_text(references))
            for name in step.requires:
                base[name] = texts.get(name, "")
            if step.kind is StepKind.GATE:
                self._gate(step, texts, transcript)
                texts[step.name] = "passed"
            elif step.kind is StepKind.SYNTHESIZE:
                texts[step.name] = self._synthesize(step, base, transcript)
            elif step.kind is StepKind.TOOL_CALL:
                out = self._call(skill, step, step.input_template.format_map(base), None,
                                 transcript)
                self._collect(out, references)
                texts[step.name] = render_output(out)
            else:
                outs = self._iterate(skill, step, base, texts, transcript)
                for out in outs:
                    self._collect(out, references)
                texts[step.name] = self._merged_text(outs)
            if step.output:
                transcript.final_outputs[step.output] = texts[step.name]
        transcript.final_outputs["references"] = list(references.values())
        transcript.final_outputs["policies"] = policies
        transcript.status = "completed"
        return transcript

    # -- step kinds -------------------------------------------------------

    def _record(self, transcript: Transcript, step: Step, iteration, inputs, output,
                started, error=None) -> None:
        transcript.append(StepRecord(step.name, step.kind.value, iteration, inputs, output,
                                     started, self.clock(), error, step.output))

    def _gate(self, step: Step, texts: Mapping[str, str], transcript: Transcript) -> None:
        started = self.clock()
        empty = [name for name in step.requires if not texts.get(name, "").strip()]
        if empty:
            reason = "empty outputs: " + ", ".join(empty)
            self._record(transcript, step, None, ", ".join(step.requires), None, started, reason)
            self._halt(step, reason, transcript)
        self._record(transcript, step, None, ", ".join(step.requires), "passed", started)

    def _synthesize(self, step: Step, context: _Context, transcript: Transcript) -> str:
        started = self.clock()
        prompt = step.input_template.format_map(context)
        text = self.step_executor(step, prompt, context)
        self._record(transcript, step, None, prompt, text, started)
        return text

    def _call(self, skill: Skill, step: Step, inputs: str, iteration: Optional[int],
              transcript: Transcript) -> Any:
        started = self.clock()
        tool = self.tools.get(step.tool)
        param = tool.descriptor.primary_parameter
        try:
            out = tool.func(**{param: inputs}) if param else tool.func(inputs)
        except Exception as exc:
            reason = f"{type(exc).__name__}: {exc}"
            self._record(transcript, step, iteration, inputs, None, started, reason)
            if skill.on_error == "halt":
                self._halt(step, reason, transcript)
            return None
        self._record(transcript, step, iteration, inputs, out, started)
        return out

    def _iterate(self, skill: Skill, step: Step, base: _Context, texts: Mapping[str, str],
                 transcript: Transcript) -> list[Any]:
        cond = step.condition
        expansions = []
        if step.expansions_from:
            expansions = [ln.strip() for ln in texts.get(step.expansions_from, "").splitlines()
                          if ln.strip()]
        query_terms = {t.text for t in tokenize(base["query"])}
        seen: set[str] = set()
        outputs: list[Any] = []
        for i in range(cond.max_iterations):
            if i < len(expansions):
                inputs = expansions[i]
            else:
                ctx = _Context(base)
                ctx["iteration"] = i
                ctx["keywords"] = " ".join(harvest_keywords(outputs, query_terms))
                inputs = " ".join(step.input_template.format_map(ctx).split())
            out = self._call(skill, step, inputs, i, transcript)
            outputs.append(out)
            new = {r["doc_id"] for r in _result_docs(out)} - seen
            seen |= new
            if cond.rule == "min_documents" and len(seen) >= cond.threshold:
                break
            if cond.rule == "no_new_results" and not new:
                break
        return outputs

    def _halt(self, step: Step, reason: str, transcript: Transcript) -> None:
        transcript.status = "halted"
        transcript.halted_at = step.name
        transcript.error = reason
        raise SkillHalted(step.name, reason, transcript)

    # -- references -------------------------------------------------------

    @staticmethod
    def _collect(output: Any, references: dict[str, dict[str, Any]]) -> None:
        for r in _result_docs(output):
            ref = references.setdefault(r["doc_id"], {
                "doc_id": r["doc_id"], "filename": r.get("filename", ""), "pages": [],
                "snippet": ((r.get("snippets") or [{}])[0]).get("text", ""),
            })
            ref["pages"] = sorted(set(ref["pages"]) | set(r.get("pages", [])))

    @staticmethod
    def _references_text(references: Mapping[str, dict[str, Any]]) -> str:
        return "\n".join(
            f"- {r['filename']} (pages {', '.join(map(str, r['pages']))})"
            for r in references.values())

    @staticmethod
    def _merged_text(outputs: list[Any]) -> str:
        seen: set[str] = set()
        lines = []
        for out in outputs:
            for line in render_output(out).splitlines():
                if line not in seen:
                    seen.add(line)
                    lines.append(line)
        return "\n".join(lines)


def execute(skill: Skill, query: str, tools: ToolRegistry,
            step_executor: Optional[StepExecutor] = None, **kwargs) -> Transcript:
    return SkillRunner(tools, step_executor, **kwargs).execute(skill, query)
