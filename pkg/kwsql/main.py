"""Main CLI module for kwsql."""

import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterator, List, Optional

import click

from . import __version__
from .config import MODES, AppConfig, load_config
from .database import SQLiteBackend, database_values, read_value_source
from .errors import ConfigError, KwsqlError, PipelineError
from .evaluation import load_benchmark, run_benchmark, run_linking_benchmark
from .examples import Embedder, ExampleStore, HashingEmbedder, load_store, save_store
from .keywords import build_dictionary, compile_keyword_query, load_dictionary, match_keywords, save_dictionary
from .pipeline import AblationMode, PipelineDeps, answer, digest, schema_link
from .prompts import PromptLibrary
from .providers import ProviderFactory
from .providers.gateway import LLMGateway
from .schema import build_referential_graph, load_schema
from .synthetic import DatabaseDoc, GenerationConfig, generate_dataset, write_discard_log
from .views import render_view_ddl, render_view_sql, synthesize_view

logger = logging.getLogger(__name__)

CONFIG_EXIT = 2
RUNTIME_EXIT = 1
INTERRUPT_EXIT = 130


class CommandError(click.ClickException):
    """Single-line ``ERROR <step>: message`` failure."""

    def __init__(self, step: str, message: str, exit_code: int = RUNTIME_EXIT):
        super().__init__(message)
        self.step = step
        self.exit_code = exit_code

    def show(self, file: Any = None) -> None:
        click.echo(f"ERROR {self.step}: {self.message}", err=True)


def to_command_error(error: KwsqlError) -> CommandError:
    """Map a library error to its CLI error line and exit code."""
    code = CONFIG_EXIT if isinstance(error, ConfigError) else RUNTIME_EXIT
    return CommandError(error.step, str(error), code)


@contextmanager
def reported() -> Iterator[None]:
    """Turn any KwsqlError raised in the block into a CommandError."""
    try:
        yield
    except KwsqlError as e:
        raise to_command_error(e) from e


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


class Session:
    """Dependencies built on first use from one configuration."""

    def __init__(self, config: AppConfig):
        self.config = config
        self._schema = None
        self._backend: Optional[SQLiteBackend] = None
        self._gateway: Optional[LLMGateway] = None

    @property
    def schema(self):
        if self._schema is None:
            self._schema = load_schema(self.config.require("schema_path"))
        return self._schema

    @property
    def backend(self) -> SQLiteBackend:
        """Database opened from ``database_url`` and seeded once."""
        if self._backend is None:
            self._backend = SQLiteBackend.from_url(self.config.database_url, self.config.database_seed_path)
        return self._backend

    @property
    def gateway(self) -> LLMGateway:
        if self._gateway is None:
            provider = ProviderFactory().from_app_config(self.config)
            self._gateway = LLMGateway(provider, PromptLibrary(self.config.templates_dir), seed=self.config.seed)
        return self._gateway

    def embedder(self) -> Embedder:
        if not self.config.embedding_model:
            return HashingEmbedder()
        if not self.config.http_endpoint:
            raise ConfigError("embedding_model needs http_endpoint")
        from .providers.openai import create_embedder

        return create_embedder(self.config.http_endpoint, self.config.embedding_model, os.getenv("LLM_API_KEY"))

    def values(self):
        """Indexed values from the value source file, or from the database when none is set."""
        if self.config.value_source_path:
            return read_value_source(self.config.require("value_source_path"))
        return database_values(self.backend, self.schema)

    def dictionary(self):
        """The saved dictionary when present, otherwise one built from schema and values."""
        path = self.config.dictionary_path
        if path and Path(path).exists():
            return load_dictionary(path)
        logger.info("No dictionary file; building the dictionary in memory")
        return build_dictionary(self.schema, self.values())

    def store(self) -> ExampleStore:
        path = self.config.examples_path
        if path and Path(path).exists():
            return load_store(path, self.embedder())
        logger.warning("No examples file; dynamic few-shot retrieval has no examples")
        return ExampleStore(embedder=self.embedder())

    def deps(self, needs_llm: bool = True) -> PipelineDeps:
        gateway = self.gateway if needs_llm or self.config.has_llm_backend else None
        return PipelineDeps(
            schema=self.schema,
            dictionary=self.dictionary(),
            store=self.store(),
            gateway=gateway,
            backend=self.backend,
            k=self.config.k,
            row_samples=self.config.row_samples,
            max_sub_questions=self.config.max_sub_questions,
            strip_prefixes=tuple(self.config.strip_prefixes),
        )

    def output_dir(self) -> Path:
        path = Path(self.config.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def close(self) -> None:
        if self._backend is not None:
            self._backend.close()
        if self._gateway is not None:
            self._gateway.provider.close()


def common_options(func: Callable) -> Callable:
    """Attach the options every command shares."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Config file (default ~/.kwsql-config.yaml)."),
        click.option("--mode", type=click.Choice(MODES), default=None, help="Schema-linking ablation mode."),
        click.option("--k", type=int, default=None, help="Few-shot examples per prompt."),
        click.option("--seed", type=int, default=None, help="Random seed."),
        click.option("--concurrency", type=int, default=None, help="Parallel questions or attempts."),
        click.option("-v", "--verbose", "verbosity", count=True, help="-v for info, -vv for debug logs."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@contextmanager
def session(config_path: Optional[str], mode: Optional[str], k: Optional[int], seed: Optional[int],
            concurrency: Optional[int], verbosity: int) -> Iterator[Session]:
    """Load the config with command-line overrides and close the session on exit."""
    with reported():
        config = load_config(config_path).override(
            mode=mode, k=k, seed=seed, concurrency=concurrency, verbosity=verbosity or None
        )
        configure_logging(config.verbosity)
        current = Session(config)
        try:
            yield current
        finally:
            current.close()


def _echo_json(payload: Any) -> None:
    click.echo(json.dumps(payload, indent=2, ensure_ascii=False, default=str))


@click.group()
@click.version_option(version=__version__, prog_name="kwsql")
def cli() -> None:
    """Keyword-search-augmented text-to-SQL."""


@cli.command()
@common_options
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Dictionary file to write.")
def index(output: Optional[str], **options: Any) -> None:
    """Build the keyword dictionary from the schema and indexed values."""
    with session(**options) as s:
        dictionary = build_dictionary(s.schema, s.values())
        target = output or s.config.dictionary_path
        if not target:
            raise ConfigError("dictionary_path is not configured and no --output given")
        save_dictionary(dictionary, target)
        click.echo(f"Wrote {len(dictionary.entries)} dictionary entries to {target}")


@cli.command("gen-dataset")
@common_options
@click.option("--target", type=int, default=None, help="Number of examples to generate.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Examples JSONL to write.")
def gen_dataset(target: Optional[int], output: Optional[str], **options: Any) -> None:
    """Generate synthetic (question, SQL) examples."""
    with session(**options) as s:
        settings = s.config.generation
        generation = GenerationConfig(
            table_count_distribution=settings.table_count_distribution,
            examples_target=target or settings.examples_target,
            rng_seed=s.config.seed,
            sample_values=settings.sample_values,
            concurrency=s.config.concurrency,
        )
        destination = output or s.config.examples_path
        if not destination:
            raise ConfigError("examples_path is not configured and no --output given")
        discards: List[Any] = []
        store = generate_dataset(
            generation, s.schema, s.backend, DatabaseDoc.from_schema(s.schema), s.gateway, s.embedder(), discards
        )
        save_store(store, destination)
        discard_log = s.output_dir() / "discards.jsonl"
        write_discard_log(discards, discard_log)
        click.echo(f"Wrote {len(store)} examples to {destination} ({len(discards)} discarded, see {discard_log})")


@cli.command()
@common_options
@click.argument("question")
def link(question: str, **options: Any) -> None:
    """Schema linking for one question."""
    with session(**options) as s:
        mode = AblationMode(s.config.mode)
        result = schema_link(question, mode, s.deps(needs_llm=mode is not AblationMode.DANKE_ONLY))
        _echo_json({"tables": result.tables, **result.matches.to_dict()})


@cli.command()
@common_options
@click.argument("tables")
@click.option("--ddl", is_flag=True, help="Also print the view as a table definition.")
def view(tables: str, ddl: bool, **options: Any) -> None:
    """Synthesize the joining view over comma-separated TABLES."""
    with session(**options) as s:
        names = [name.strip() for name in tables.split(",") if name.strip()]
        definition = synthesize_view(s.schema, names, strip_prefixes=tuple(s.config.strip_prefixes))
        click.echo(render_view_sql(definition))
        if ddl:
            click.echo()
            click.echo(render_view_ddl(definition))


@cli.command()
@common_options
@click.argument("keywords", nargs=-1, required=True)
@click.option("--run", is_flag=True, help="Execute the query and print its rows.")
def search(keywords: List[str], run: bool, **options: Any) -> None:
    """Compile KEYWORDS into a query over the view joining every matched table."""
    with session(**options) as s:
        matches = match_keywords(s.dictionary(), list(keywords))
        for keyword in matches.unmatched:
            click.echo(f"unmatched keyword: {keyword}", err=True)
        query = compile_keyword_query(
            s.schema, matches, build_referential_graph(s.schema), tuple(s.config.strip_prefixes)
        )
        click.echo(query.base_sql)
        if run:
            _echo_json(s.backend.run(query.base_sql).to_dict())


def _write_trace(s: Session, question: str, trace: Any) -> Path:
    path = s.output_dir() / f"trace-{digest(question)}.json"
    trace.save(path, verbose=s.config.verbosity > 0)
    click.echo(f"Trace written to {path}", err=True)
    return path


@cli.command()
@common_options
@click.argument("question")
@click.option("--trace", "with_trace", is_flag=True, help="Write the step trace file.")
def ask(question: str, with_trace: bool, **options: Any) -> None:
    """Answer a question with SQL over the base tables."""
    with session(**options) as s:
        try:
            result = answer(question, s.config.mode, s.deps())
        except PipelineError as e:
            if with_trace and e.trace is not None:
                _write_trace(s, question, e.trace)
            raise
        click.echo(result.sql_over_base)
        if with_trace:
            _write_trace(s, question, result.trace)


@cli.command("eval")
@common_options
@click.argument("benchmark", type=click.Path(exists=True, dir_okay=False))
def evaluate(benchmark: str, **options: Any) -> None:
    """Execution accuracy of a benchmark file in the configured mode."""
    with session(**options) as s:
        questions = load_benchmark(benchmark)
        report = run_benchmark(questions, s.config.mode, s.deps(), concurrency=s.config.concurrency)
        json_path, _, review_path = report.save(s.output_dir())
        click.echo(report.render())
        click.echo(f"Report written to {json_path}; near misses in {review_path}", err=True)


@cli.command("link-eval")
@common_options
@click.argument("benchmark", type=click.Path(exists=True, dir_okay=False))
@click.option("--modes", default=",".join(MODES), help="Comma-separated modes to compare.")
def link_eval(benchmark: str, modes: str, **options: Any) -> None:
    """Schema-linking precision, recall and F1 across modes."""
    with session(**options) as s:
        selected = [AblationMode(m.strip()) for m in modes.split(",") if m.strip()]
        needs_llm = any(m is not AblationMode.DANKE_ONLY for m in selected)
        report = run_linking_benchmark(
            load_benchmark(benchmark), selected, s.deps(needs_llm=needs_llm), concurrency=s.config.concurrency
        )
        path = s.output_dir() / "linking.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        click.echo(report.render())


@cli.command()
@common_options
def repl(**options: Any) -> None:
    """Ask questions interactively; an empty line or 'quit' ends the session."""
    with session(**options) as s:
        deps = s.deps()
        stream = click.get_text_stream("stdin")
        while True:
            click.echo("kwsql> ", nl=False)
            line = stream.readline()
            question = line.strip()
            if not line or question.lower() in ("quit", "exit", ""):
                break
            try:
                result = answer(question, s.config.mode, deps)
            except ConfigError:
                raise
            except KwsqlError as e:
                to_command_error(e).show()
                continue
            click.echo(result.sql_over_base)


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point for the kwsql CLI."""
    try:
        code = cli.main(args=args, prog_name="kwsql", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except (click.Abort, KeyboardInterrupt):
        click.echo("Interrupted.", err=True)
        return INTERRUPT_EXIT
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
