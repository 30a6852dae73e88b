"""Shared fixture loaders for the test suite."""

import itertools
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from kwsql.database import SQLiteBackend, read_value_source
from kwsql.examples import load_store
from kwsql.keywords import build_dictionary
from kwsql.pipeline import PipelineDeps
from kwsql.providers.gateway import LLMGateway
from kwsql.providers.scripted import ScriptedProvider, TranscriptRule, load_transcript
from kwsql.schema import load_schema

FIXTURES = Path(__file__).parent / "fixtures"
SCHEMA_PATH = FIXTURES / "schema.json"
SEED_PATH = FIXTURES / "seed.sql"
VALUES_PATH = FIXTURES / "values.jsonl"
EXAMPLES_PATH = FIXTURES / "examples.jsonl"
BENCHMARK_PATH = FIXTURES / "benchmark.jsonl"
TRANSCRIPT_PATH = FIXTURES / "transcript.jsonl"


def fixture_schema():
    return load_schema(SCHEMA_PATH)


def fixture_backend() -> SQLiteBackend:
    """In-memory database seeded from the fixture script."""
    return SQLiteBackend(":memory:", SEED_PATH)


# A table named after a reserved word, to check generated SQL quotes it.
ORDER_SEED = """
CREATE TABLE Installation (code TEXT PRIMARY KEY, type TEXT);
CREATE TABLE "Order" (id INTEGER PRIMARY KEY, installation_code TEXT REFERENCES Installation(code), "group" TEXT);
INSERT INTO Installation VALUES ('P-1', 'rig'), ('P-2', 'platform');
INSERT INTO "Order" VALUES (1, 'P-1', 'open'), (2, 'P-1', 'closed'), (3, 'P-2', 'open');
"""


def order_schema():
    """Two tables, one named after a keyword, joined by one foreign key."""
    return load_schema({
        "tables": [
            {"name": "Installation", "columns": [
                {"name": "code", "type": "varchar(10)", "pk": True},
                {"name": "type", "type": "varchar(20)", "indexed": True},
            ]},
            {"name": "Order", "columns": [
                {"name": "id", "type": "integer", "pk": True},
                {"name": "installation_code", "type": "varchar(10)"},
                {"name": "group", "type": "varchar(20)", "indexed": True},
            ]},
        ],
        "foreign_keys": [
            {"from_table": "Order", "to_table": "Installation",
             "columns": [{"from": "installation_code", "to": "code"}]},
        ],
    })


def order_backend(directory: Path) -> SQLiteBackend:
    seed = directory / "order.sql"
    seed.write_text(ORDER_SEED, encoding="utf-8")
    return SQLiteBackend(":memory:", seed)


def fixture_dictionary(schema=None):
    return build_dictionary(schema or fixture_schema(), read_value_source(VALUES_PATH))


def fixture_rules() -> List[TranscriptRule]:
    return load_transcript(TRANSCRIPT_PATH)


def scripted_gateway(rules: Optional[Iterable[Any]] = None) -> LLMGateway:
    rules = fixture_rules() if rules is None else list(rules)
    return LLMGateway(ScriptedProvider({"rules": rules}))


def fixture_deps(rules: Optional[Iterable[Any]] = None, with_backend: bool = True, **overrides: Any) -> PipelineDeps:
    """Pipeline dependencies over the fixtures; ``rules`` replace the fixture transcript."""
    schema = fixture_schema()
    options: Dict[str, Any] = {
        "schema": schema,
        "dictionary": fixture_dictionary(schema),
        "store": load_store(EXAMPLES_PATH),
        "gateway": scripted_gateway(rules),
        "backend": fixture_backend() if with_backend else None,
    }
    options.update(overrides)
    return PipelineDeps(**options)


def write_config(directory: Path, **extra: Any) -> Path:
    """A YAML config in ``directory`` pointing at the fixtures."""
    data: Dict[str, Any] = {
        "schema_path": str(SCHEMA_PATH),
        "examples_path": str(EXAMPLES_PATH),
        "scripted_path": str(TRANSCRIPT_PATH),
        "value_source_path": str(VALUES_PATH),
        "database_seed_path": str(SEED_PATH),
        "output_dir": str(directory / "out"),
        "concurrency": 1,
    }
    data.update(extra)
    path = directory / "config.yaml"
    # JSON is valid YAML
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


def fenced(sql: str) -> str:
    return f"```sql\n{sql}\n```"


def generation_rules(single_sql=None, pair_sql=None, repair_sql=None) -> List[Dict[str, Any]]:
    """Transcript answering every one- and two-table selection of the fixture schema.

    Drafts name their tables, so later calls can be matched by draft text alone.
    """
    tables = fixture_schema().table_names
    single_sql = single_sql or (lambda a: f"SELECT * FROM {a}")
    pair_sql = pair_sql or (lambda a, b: f"SELECT * FROM {a} JOIN {b} ON 1 = 1")
    selections = [(pair, pair_sql(*pair)) for pair in itertools.combinations(tables, 2)]
    selections += [((table,), single_sql(table)) for table in tables]

    rules: List[Dict[str, Any]] = []
    for selected, _ in selections:
        rules.append({
            "match": {"kind": "synth_create_question", "contains": [f"CREATE TABLE {t} (" for t in selected]},
            "response": f"[draft:{'+'.join(selected)}]",
        })
    for selected, sql in selections:
        draft = f"[draft:{'+'.join(selected)}]"
        if repair_sql is not None:
            rules.append({
                "match": {"kind": "synth_generate_sql", "contains": [draft, "could not be used"]},
                "response": fenced(repair_sql(*selected)),
            })
        rules.append({"match": {"kind": "synth_generate_sql", "contains": draft}, "response": fenced(sql)})
        rules.append({
            "match": {"kind": "synth_improve_question", "contains": draft},
            "response": f"Which records involve {' and '.join(selected)}?",
        })
    return rules
