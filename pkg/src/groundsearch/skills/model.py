from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Optional


class StepKind(str, Enum):
    TOOL_CALL = "tool_call"
    ITERATE_UNTIL = "iterate_until"
    SYNTHESIZE = "synthesize"
    GATE = "gate"


TOOL_KINDS = (StepKind.TOOL_CALL, StepKind.ITERATE_UNTIL)

# names every template may use besides the outputs of required steps
BUILTIN_FIELDS = frozenset({"query", "iteration", "keywords", "policies", "references"})


@dataclass(frozen=True)
class Condition:
    """Stop rule for ``iterate_until``: ``min_documents N`` or ``no_new_results``."""

    max_iterations: int
    rule: str
    threshold: int = 0

    @classmethod
    def parse(cls, text: str, max_iterations: int) -> "Condition":
        parts = text.split()
        if parts[:1] == ["min_documents"] and len(parts) == 2 and parts[1].isdigit():
            return cls(max_iterations, "min_documents", int(parts[1]))
        if parts == ["no_new_results"]:
            return cls(max_iterations, "no_new_results")
        raise ValueError(f"unknown sufficiency rule {text!r} "
                         "(use 'min_documents N' or 'no_new_results')")

    def describe(self) -> str:
        return f"min_documents {self.threshold}" if self.rule == "min_documents" else self.rule


@dataclass(frozen=True)
class Step:
    name: str
    kind: StepKind
    tool: Optional[str] = None
    input_template: str = ""
    condition: Optional[Condition] = None
    requires: tuple[str, ...] = ()
    output: Optional[str] = None
    expansions_from: Optional[str] = None


@dataclass(frozen=True)
class Skill:
    name: str
    description: str
    trigger_hints: tuple[str, ...]
    steps: tuple[Step, ...]
    policies: tuple[tuple[str, str], ...] = ()
    on_error: str = "halt"
    source: str = ""

    @property
    def policy_map(self) -> dict[str, str]:
        return dict(self.policies)

    def step(self, name: str) -> Step:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)


def template_fields(template: str) -> set[str]:
    """Root field names referenced by a ``str.format`` template."""
    names = set()
    for _, field_name, _, _ in string.Formatter().parse(template):
        if field_name:
            root = field_name.split(".", 1)[0].split("[", 1)[0]
            names.add(root)
    return names


@dataclass
class StepRecord:
    step: str
    kind: str
    iteration: Optional[int]
    inputs: str
    output: Any
    started: float
    finished: float
    error: Optional[str] = None
    produces: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Transcript:
    skill_name: str
    query: str
    step_records: list[StepRecord] = field(default_factory=list)
    final_outputs: dict[str, Any] = field(default_factory=dict)
    status: str = "running"
    halted_at: Optional[str] = None
    error: Optional[str] = None

    def append(self, record: StepRecord) -> None:
        self.step_records.append(record)

    def step_sequence(self) -> list[str]:
        return [r.step for r in self.step_records]

    def to_dict(self) -> dict[str, Any]:
        return {
            "skill_name": self.skill_name,
            "query": self.query,
            "status": self.status,
            "halted_at": self.halted_at,
            "error": self.error,
            "step_records": [r.to_dict() for r in self.step_records],
            "final_outputs": self.final_outputs,
        }
