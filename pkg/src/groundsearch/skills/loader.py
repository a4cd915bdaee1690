"""Skill file parsing.

A ``.skill`` file is a header of ``key: value`` lines followed by
``[step <name>]`` blocks, each with its own ``key: value`` lines. Indented
lines continue the previous value (newline-joined), so templates can span
several lines. A ``#`` in the first column starts a comment line.

Header keys: ``name``, ``description``, ``triggers`` (comma-separated),
``on_error`` (``halt`` | ``continue``), ``policy.<name>``.

Step keys: ``kind`` (``tool_call`` | ``iterate_until`` | ``synthesize`` |
``gate``), ``tool``, ``input``, ``requires`` (comma-separated earlier steps),
``output`` (name under which the result is returned), ``max_iterations``,
``until`` (``min_documents N`` | ``no_new_results``) and ``expansions_from``.

The same structure is accepted as JSON (``.json``): header keys at the top
level, ``triggers`` and ``requires`` as lists, ``policies`` as an object and
``steps`` as an ordered list of objects with a ``name``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Optional

from groundsearch.skills.model import (
    BUILTIN_FIELDS,
    TOOL_KINDS,
    Condition,
    Skill,
    Step,
    StepKind,
    template_fields,
)

HEADER_KEYS = {"name", "description", "triggers", "on_error"}
STEP_KEYS = {"kind", "tool", "input", "requires", "output", "max_iterations", "until",
             "expansions_from"}
_STEP_HEADER = re.compile(r"^\[step\s+([A-Za-z0-9_\-]+)\]\s*$")
_KEY_LINE = re.compile(r"^([A-Za-z0-9_.\-]+)\s*:\s?(.*)$")


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.message}"


class SkillParseError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("\n".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


class SkillLoadError(RuntimeError):
    pass


@dataclass
class _Block:
    line: int
    name: Optional[str] = None
    values: dict[str, tuple[str, int]] = field(default_factory=dict)


def _blocks(text: str, path: str, diags: list[Diagnostic]) -> list[_Block]:
    blocks = [_Block(1)]
    key: Optional[str] = None
    indent = 0
    pending_blank = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.startswith("#"):
            continue
        if not raw.strip():
            if key is not None:
                pending_blank += 1
            continue
        cur = blocks[-1]
        if raw[0] in " \t":
            if key is None:
                diags.append(Diagnostic(path, lineno, "continuation line without a key"))
                continue
            value, first = cur.values[key]
            stripped = raw.lstrip(" \t")
            if not indent:
                indent = len(raw) - len(stripped)
            piece = raw[min(indent, len(raw) - len(stripped)):]
            sep = "\n" * (pending_blank + 1) if value else ""
            cur.values[key] = (value + sep + piece, first)
            pending_blank = 0
            continue
        pending_blank = 0
        indent = 0
        m = _STEP_HEADER.match(raw)
        if m:
            blocks.append(_Block(lineno, m.group(1)))
            key = None
            continue
        m = _KEY_LINE.match(raw)
        if not m:
            diags.append(Diagnostic(path, lineno, f"expected 'key: value', got {raw.strip()!r}"))
            key = None
            continue
        key = m.group(1)
        if key in cur.values:
            diags.append(Diagnostic(path, lineno, f"duplicate key {key!r}"))
        cur.values[key] = (m.group(2).strip(), lineno)
    return blocks


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in re.split(r"[,\n]", value) if v.strip())


def parse_skill_text(text: str, path: str = "<skill>") -> Skill:
    diags: list[Diagnostic] = []
    blocks = _blocks(text, path, diags)
    header, step_blocks = blocks[0], blocks[1:]
    policies = []
    for key, (value, line) in header.values.items():
        if key.startswith("policy."):
            policies.append((key[len("policy."):], value))
        elif key not in HEADER_KEYS:
            diags.append(Diagnostic(path, line, f"unknown header key {key!r}"))
    raw = {
        "name": header.values.get("name", ("", 1)),
        "description": header.values.get("description", ("", 1)),
        "triggers": header.values.get("triggers", ("", 1)),
        "on_error": header.values.get("on_error", ("halt", 1)),
    }
    steps = []
    for block in step_blocks:
        for key, (_, line) in block.values.items():
            if key not in STEP_KEYS:
                diags.append(Diagnostic(path, line, f"unknown step key {key!r}"))
        steps.append((block.name, block.line, block.values))
    skill = _build(raw, policies, steps, path, diags, header.line)
    if diags:
        raise SkillParseError(diags)
    return skill


def _build(raw, policies, steps, path, diags, header_line) -> Optional[Skill]:
    """Shared validation for the text and JSON forms.

    ``raw`` maps header keys to ``(value, line)``; ``steps`` is a list of
    ``(name, line, {key: (value, line)})``.
    """
    name, name_line = raw["name"]
    if not name:
        diags.append(Diagnostic(path, header_line, "skill needs a 'name'"))
    on_error, on_error_line = raw["on_error"]
    if on_error not in ("halt", "continue"):
        diags.append(Diagnostic(path, on_error_line, "on_error must be 'halt' or 'continue'"))
    if not steps:
        diags.append(Diagnostic(path, header_line, "skill has no steps"))
    built: list[Step] = []
    seen: list[str] = []
    for step_name, line, values in steps:
        get = lambda k, d="": values.get(k, (d, line))  # noqa: E731
        if step_name in seen:
            diags.append(Diagnostic(path, line, f"duplicate step name {step_name!r}"))
        kind_text, kind_line = get("kind")
        try:
            kind = StepKind(kind_text)
        except ValueError:
            diags.append(Diagnostic(path, kind_line, f"unknown step kind {kind_text!r}"))
            seen.append(step_name)
            continue
        tool, tool_line = get("tool")
        if kind in TOOL_KINDS and not tool:
            diags.append(Diagnostic(path, line, f"step {step_name!r} ({kind.value}) needs a tool"))
        if kind not in TOOL_KINDS and tool:
            diags.append(Diagnostic(path, tool_line,
                                    f"step {step_name!r} ({kind.value}) must not name a tool"))
        req_text, req_line = get("requires")
        requires = _split_list(req_text) if isinstance(req_text, str) else tuple(req_text)
        for r in requires:
            if r not in seen:
                where = "a later step" if any(s[0] == r for s in steps) else "an unknown step"
                diags.append(Diagnostic(path, req_line,
                                        f"step {step_name!r} requires {r!r}, {where}"))
        if kind is StepKind.GATE and not requires:
            diags.append(Diagnostic(path, line, f"gate {step_name!r} must list required outputs"))
        expansions_from, exp_line = get("expansions_from")
        if expansions_from and expansions_from not in requires:
            diags.append(Diagnostic(path, exp_line, "expansions_from must be one of 'requires'"))
        condition = None
        if kind is StepKind.ITERATE_UNTIL:
            max_text, max_line = get("max_iterations")
            until, until_line = get("until", "no_new_results")
            try:
                max_it = int(max_text)
                if max_it < 1:
                    raise ValueError
            except (TypeError, ValueError):
                diags.append(Diagnostic(path, max_line, "max_iterations must be a positive integer"))
                max_it = 1
            try:
                condition = Condition.parse(str(until), max_it)
            except ValueError as exc:
                diags.append(Diagnostic(path, until_line, str(exc)))
        template, template_line = get("input")
        allowed = BUILTIN_FIELDS | set(requires)
        for f in sorted(template_fields(template)) if isinstance(template, str) else ():
            if f not in allowed:
                diags.append(Diagnostic(path, template_line,
                                        f"template field {{{f}}} is not a builtin or required step"))
        output, _ = get("output")
        built.append(Step(step_name, kind, tool or None, template, condition, requires,
                          output or None, expansions_from or None))
        seen.append(step_name)
    if diags:
        return None
    triggers_text, _ = raw["triggers"]
    triggers = _split_list(triggers_text) if isinstance(triggers_text, str) else tuple(triggers_text)
    description = raw["description"][0]
    return Skill(name, description, triggers, tuple(built), tuple(policies), on_error, path)


def parse_skill_json(text: str, path: str = "<skill.json>") -> Skill:
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise SkillParseError([Diagnostic(path, getattr(exc, "lineno", 1), str(exc))]) from exc
    diags: list[Diagnostic] = []
    if not isinstance(data, dict):
        raise SkillParseError([Diagnostic(path, 1, "top level must be an object")])
    raw = {k: (data.get(k, d), 1) for k, d in
           (("name", ""), ("description", ""), ("triggers", []), ("on_error", "halt"))}
    policies = [(str(k), str(v)) for k, v in (data.get("policies") or {}).items()]
    steps = []
    for i, s in enumerate(data.get("steps") or []):
        values = {k: (v, 1) for k, v in s.items() if k != "name"}
        for k in values:
            if k not in STEP_KEYS:
                diags.append(Diagnostic(path, 1, f"steps[{i}]: unknown step key {k!r}"))
        steps.append((s.get("name", f"step{i}"), 1, values))
    skill = _build(raw, policies, steps, path, diags, 1)
    if diags:
        raise SkillParseError(diags)
    return skill


def parse_skill_file(path: str | Path) -> Skill:
    path = Path(path)
    text = path.read_text("utf-8")
    if path.suffix == ".json":
        return parse_skill_json(text, str(path))
    return parse_skill_text(text, str(path))


@dataclass
class SkillRegistry:
    skills: dict[str, Skill] = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.skills)

    def __contains__(self, name: object) -> bool:
        return name in self.skills

    def __getitem__(self, name: str) -> Skill:
        return self.skills[name]

    def __iter__(self) -> Iterator[Skill]:
        return iter(self.skills[n] for n in sorted(self.skills))

    def names(self) -> list[str]:
        return sorted(self.skills)


def load_skills(directory: str | Path) -> SkillRegistry:
    """Load every ``*.skill`` / ``*.json`` file; malformed files are skipped with diagnostics."""
    directory = Path(directory)
    if not directory.is_dir():
        raise SkillLoadError(f"{directory} is not a readable directory")
    try:
        files = sorted(p for p in directory.iterdir() if p.suffix in (".skill", ".json"))
    except OSError as exc:
        raise SkillLoadError(f"cannot read {directory}: {exc}") from exc
    registry = SkillRegistry()
    origin: dict[str, Path] = {}
    for path in files:
        try:
            skill = parse_skill_file(path)
        except SkillParseError as exc:
            registry.diagnostics.extend(exc.diagnostics)
            continue
        except (OSError, UnicodeDecodeError) as exc:
            registry.diagnostics.append(Diagnostic(str(path), 0, f"unreadable: {exc}"))
            continue
        if skill.name in registry.skills:
            raise SkillLoadError(
                f"duplicate skill name {skill.name!r} in {origin[skill.name]} and {path}")
        registry.skills[skill.name] = skill
        origin[skill.name] = path
    return registry


def builtin_skills_dir() -> Path:
    return Path(str(resources.files("groundsearch.skills").joinpath("library")))
