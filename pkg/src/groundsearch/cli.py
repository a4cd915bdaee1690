"""Command line entry point: ``groundsearch serve|ingest|search|tools|skill``.

Every option also reads an environment variable named after it with a
``GS_`` prefix (``--data-dir`` -> ``GS_DATA_DIR``).
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from groundsearch.ingest import PayloadTooLarge, UploadRequest
from groundsearch.records import DocStatus
from groundsearch.search import SearchQuery, response_payload


def _common(func):
    @click.option("--data-dir", envvar="GS_DATA_DIR", default=".groundsearch", show_default=True,
                  type=click.Path(file_okay=False, path_type=Path))
    @click.option("--stopwords", envvar="GS_STOPWORDS", default=None,
                  type=click.Path(exists=True, dir_okay=False, path_type=Path),
                  help="Stopword file, one term per line.")
    @click.option("--k1", envvar="GS_K1", default=1.2, show_default=True, type=float)
    @click.option("--b", "b", envvar="GS_B", default=0.75, show_default=True, type=float)
    @click.option("--config", "config_path", envvar="GS_CONFIG", default=None,
                  type=click.Path(exists=True, dir_okay=False, path_type=Path),
                  help="INI file with [lsp.<language>] sections.")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


def _service(data_dir, stopwords, k1, b, config_path, token=None):
    from groundsearch.service import GroundingService, ServiceConfig, read_lsp_config
    lsp = read_lsp_config(config_path) if config_path else []
    return GroundingService(ServiceConfig(data_dir, stopwords, k1, b, token, lsp=lsp))


@click.group()
@click.option("-v", "--verbose", is_flag=True, envvar="GS_VERBOSE")
def main(verbose: bool) -> None:
    """Document grounding for coding agents."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_common
@click.option("--host", envvar="GS_HOST", default="127.0.0.1", show_default=True)
@click.option("--port", envvar="GS_PORT", default=8080, show_default=True, type=int)
@click.option("--token", envvar="GS_TOKEN", default=None, help="Require this bearer token.")
def serve(data_dir, stopwords, k1, b, config_path, host, port, token):
    """Run the HTTP API."""
    import uvicorn

    from groundsearch.service import create_app
    with _service(data_dir, stopwords, k1, b, config_path, token) as service:
        uvicorn.run(create_app(service), host=host, port=port)


@main.command()
@_common
@click.argument("file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--markdown", is_flag=True, envvar="GS_MARKDOWN",
              help="Ask the extractor for markdown output.")
def ingest(data_dir, stopwords, k1, b, config_path, file, markdown):
    """Ingest FILE into the store and wait for indexing."""
    with _service(data_dir, stopwords, k1, b, config_path) as service:
        try:
            doc_id = service.ingest(UploadRequest(file.name, file.read_bytes(), markdown))
        except PayloadTooLarge as exc:
            raise click.ClickException(str(exc))
        doc = service.store.get_document(doc_id)
        click.echo(json.dumps(doc.to_dict()))
        if doc.status is not DocStatus.INDEXED:
            sys.exit(1)


@main.command()
@_common
@click.argument("query")
@click.option("--json", "as_json", is_flag=True, help="Print the API response body.")
@click.option("--max-results", default=10, show_default=True, type=click.IntRange(min=1))
def search(data_dir, stopwords, k1, b, config_path, query, as_json, max_results):
    """Search the ingested documents."""
    with _service(data_dir, stopwords, k1, b, config_path) as service:
        tier, results = service.engine.run(SearchQuery(query, max_results))
    if as_json:
        click.echo(json.dumps(response_payload(tier, results), indent=2, ensure_ascii=False))
        return
    if not results:
        click.echo("no results")
        return
    click.echo(f"tier: {tier.value}")
    for r in results:
        click.echo(f"{r.score:8.4f}  {r.filename}  pages {', '.join(map(str, r.matched_pages))}")
        for s in r.snippets:
            click.echo(f"          p.{s.page_number}: {' '.join(s.text.split())}")


@main.command()
@_common
@click.option("--prompt", is_flag=True, help="Print system-prompt guidance instead.")
def tools(data_dir, stopwords, k1, b, config_path, prompt):
    """List the tool schema agents can call."""
    with _service(data_dir, stopwords, k1, b, config_path) as service:
        if prompt:
            click.echo(service.tools.system_prompt())
        else:
            click.echo(json.dumps([d.to_dict() for d in service.tools.descriptors()], indent=2))


@main.group()
def skill():
    """Inspect and run skill workflows."""


_skills_dir = click.option("--skills-dir", envvar="GS_SKILLS_DIR", default=None,
                           type=click.Path(file_okay=False, path_type=Path),
                           help="Directory of .skill/.json files (default: bundled skills).")


def _registry(skills_dir):
    from groundsearch.skills import builtin_skills_dir, load_skills
    registry = load_skills(skills_dir or builtin_skills_dir())
    for d in registry.diagnostics:
        click.echo(f"warning: {d}", err=True)
    return registry


@skill.command("list")
@_skills_dir
def skill_list(skills_dir):
    for s in _registry(skills_dir):
        click.echo(f"{s.name}\t{' '.join(s.description.split())}")


@skill.command("check")
@click.argument("file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def skill_check(file):
    """Validate a skill file and report line-level problems."""
    from groundsearch.skills import SkillParseError, parse_skill_file
    try:
        s = parse_skill_file(file)
    except SkillParseError as exc:
        for d in exc.diagnostics:
            click.echo(str(d), err=True)
        sys.exit(1)
    click.echo(f"ok: {s.name} ({len(s.steps)} steps)")


@skill.command("run")
@_common
@_skills_dir
@click.argument("name", required=False)
@click.option("--query", required=True)
@click.option("--transcript", "transcript_path", type=click.Path(dir_okay=False, path_type=Path))
def skill_run(data_dir, stopwords, k1, b, config_path, skills_dir, name, query,
              transcript_path):
    """Run skill NAME (or the best match for --query) with the template synthesizer."""
    from groundsearch.skills import SkillError, SkillHalted, SkillRunner, select_skill
    registry = _registry(skills_dir)
    if name:
        if name not in registry:
            raise click.ClickException(f"unknown skill {name!r}")
        chosen = registry[name]
    else:
        chosen = select_skill(registry, query)
        if chosen is None:
            raise click.ClickException("no skill matches the query")
    with _service(data_dir, stopwords, k1, b, config_path) as service:
        try:
            transcript = SkillRunner(service.tools).execute(chosen, query)
            code = 0
        except SkillHalted as exc:
            transcript, code = exc.transcript, 2
            click.echo(f"halted: {exc}", err=True)
        except SkillError as exc:
            raise click.ClickException(str(exc))
    text = json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False, default=str)
    if transcript_path:
        transcript_path.write_text(text, "utf-8")
        click.echo(f"{transcript.status}: {len(transcript.step_records)} step records -> "
                   f"{transcript_path}")
    else:
        click.echo(text)
    sys.exit(code)


if __name__ == "__main__":
    main()
