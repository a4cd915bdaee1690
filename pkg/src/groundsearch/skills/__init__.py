"""Researcher-authored workflows executed over the tool registry."""

from groundsearch.skills.loader import (
    Diagnostic,
    SkillLoadError,
    SkillParseError,
    SkillRegistry,
    builtin_skills_dir,
    load_skills,
    parse_skill_file,
    parse_skill_json,
    parse_skill_text,
)
from groundsearch.skills.model import Condition, Skill, Step, StepKind, StepRecord, Transcript
from groundsearch.skills.runner import (
    MissingTools,
    SkillError,
    SkillHalted,
    SkillRunner,
    TemplateExecutor,
    execute,
    select_skill,
)
