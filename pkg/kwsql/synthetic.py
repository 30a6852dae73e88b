"""Synthetic (question, SQL) example generation over a seeded random source."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .database import ExecutionBackend, sample_column_values
from .errors import GenerationError, ResponseParseError, SQLAnalysisError
from .examples import Embedder, ExamplePair, ExampleStore
from .prompts import Expected, PromptKind
from .providers.gateway import LLMCall, LLMGateway
from .schema import (
    ColumnDef,
    DataType,
    ReferentialGraph,
    RelationalSchema,
    build_referential_graph,
    connected_component,
    fold,
    render_ddl,
)
from .sqltext import from_tables, quote_identifier

logger = logging.getLogger(__name__)

OUTSIDE_SELECTION = "table outside selection"
SELECTED_MISSING = "selected table missing"
UNPARSEABLE = "unparseable sql"
DISCARD_REASONS = (OUTSIDE_SELECTION, SELECTED_MISSING, UNPARSEABLE)


class HintKind(str, Enum):
    """Kind of restriction suggested for a column."""

    EQUALITY = "equality"
    PATTERN = "pattern"
    AGGREGATION = "aggregation"
    RANGE = "range"


DEFAULT_POLICY: Dict[DataType, HintKind] = {
    DataType.STRING: HintKind.PATTERN,
    DataType.INTEGER: HintKind.AGGREGATION,
    DataType.DECIMAL: HintKind.AGGREGATION,
    DataType.DATE: HintKind.RANGE,
    DataType.TIMESTAMP: HintKind.RANGE,
    DataType.BOOLEAN: HintKind.EQUALITY,
}


@dataclass
class GenerationConfig:
    """Knobs of one synthetic dataset run; validated on construction."""

    table_count_distribution: Dict[int, float] = field(default_factory=lambda: {1: 0.4, 2: 0.4, 3: 0.2})
    examples_target: int = 10
    rng_seed: int = 0
    restriction_policy: Dict[DataType, HintKind] = field(default_factory=lambda: dict(DEFAULT_POLICY))
    sample_values: int = 5
    attempt_budget_factor: int = 4
    concurrency: int = 1
    connect_retries: int = 50

    def __post_init__(self):
        distribution = {int(n): float(p) for n, p in self.table_count_distribution.items()}
        if not distribution:
            raise GenerationError("table_count_distribution is empty", step="config")
        if any(n < 1 for n in distribution):
            raise GenerationError("table counts must be at least 1", step="config")
        if any(p < 0 for p in distribution.values()) or abs(sum(distribution.values()) - 1.0) > 1e-9:
            raise GenerationError("table_count_distribution must sum to 1", step="config")
        if self.examples_target < 1:
            raise GenerationError("examples_target must be positive", step="config")
        self.table_count_distribution = distribution
        self.restriction_policy = {DataType(k): HintKind(v) for k, v in self.restriction_policy.items()}

    @property
    def attempt_budget(self) -> int:
        return self.examples_target * self.attempt_budget_factor


@dataclass(frozen=True)
class ColumnDoc:
    name: str
    description: Optional[str]
    synonyms: Tuple[str, ...]


@dataclass(frozen=True)
class TableDoc:
    name: str
    description: Optional[str]
    synonyms: Tuple[str, ...]
    columns: Tuple[ColumnDoc, ...]


def _describe(name: str, description: Optional[str], synonyms: Sequence[str]) -> str:
    text = name
    if description:
        text += f": {description}"
    if synonyms:
        text += f" (also called {', '.join(synonyms)})"
    return text


@dataclass(frozen=True)
class DatabaseDoc:
    """Descriptions and synonyms of tables and columns, as users know them."""

    tables: Tuple[TableDoc, ...]

    @classmethod
    def from_schema(cls, schema: RelationalSchema) -> "DatabaseDoc":
        return cls(tuple(
            TableDoc(
                table.name,
                table.description,
                table.synonyms,
                tuple(ColumnDoc(col.name, col.description, col.synonyms) for col in table.columns),
            )
            for table in schema.tables
        ))

    def render(self, tables: Optional[Iterable[str]] = None) -> str:
        """Bulleted documentation, restricted to ``tables`` when given."""
        wanted = {fold(t) for t in tables} if tables is not None else None
        lines = []
        for table in self.tables:
            if wanted is not None and fold(table.name) not in wanted:
                continue
            lines.append("- " + _describe(table.name, table.description, table.synonyms))
            for col in table.columns:
                if col.description or col.synonyms:
                    lines.append("  - " + _describe(col.name, col.description, col.synonyms))
        return "\n".join(lines)


@dataclass(frozen=True)
class Hint:
    """A restriction suggestion rendered into the generation prompts."""

    table: str
    column: str
    kind: HintKind
    text: str


def _literal(value: Any) -> str:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    return "'" + str(value).replace("'", "''") + "'"


def restriction_hint(
    column: ColumnDef,
    table: str = "",
    is_key: Optional[bool] = None,
    sample: Any = None,
    policy: Optional[Mapping[DataType, HintKind]] = None,
) -> Hint:
    """Restriction suggested by a column's type; key columns always suggest equality."""
    key = column.is_primary_key if is_key is None else is_key
    kind = HintKind.EQUALITY if key else (policy or DEFAULT_POLICY)[column.data_type]
    name = quote_identifier(column.name)
    if table:
        name = f"{quote_identifier(table)}.{name}"
    value = "B" if sample is None else sample
    if kind is HintKind.EQUALITY:
        text = f"{name} = {_literal(value)}"
    elif kind is HintKind.PATTERN:
        text = f"{name} LIKE " + _literal(f"%{value}%")
    elif kind is HintKind.AGGREGATION:
        text = f"aggregate {name} with COUNT, SUM, AVG, MIN or MAX"
    else:
        text = f"{name} BETWEEN <start> AND <end>"
    return Hint(table, column.name, kind, text)


def select_tables(
    n: int,
    schema: RelationalSchema,
    rng: np.random.Generator,
    graph: Optional[ReferentialGraph] = None,
    retries: int = 50,
) -> List[str]:
    """``n`` distinct tables drawn by selection weight, all in one connected component."""
    if n < 1 or n > len(schema.tables):
        raise GenerationError(f"cannot select {n} tables from a schema of {len(schema.tables)}")
    weights = np.array([table.selection_weight for table in schema.tables], dtype=np.float64)
    positive = int(np.count_nonzero(weights))
    if positive < n:
        raise GenerationError(f"only {positive} tables have a positive selection weight, {n} requested")
    graph = graph or build_referential_graph(schema)
    probabilities = weights / weights.sum()
    for _ in range(retries):
        picked = sorted(int(i) for i in rng.choice(len(weights), size=n, replace=False, p=probabilities))
        names = [schema.tables[i].name for i in picked]
        if set(names) <= connected_component(graph, names[0]):
            return names
    raise GenerationError(f"no connected set of {n} tables found in {retries} draws")


def select_columns(
    tables: Sequence[str], schema: RelationalSchema, rng: np.random.Generator
) -> Dict[str, Tuple[str, str]]:
    """Per table: its first primary-key column and one other column drawn by weight."""
    pairs: Dict[str, Tuple[str, str]] = {}
    for name in tables:
        table = schema.table(name)
        if not table.primary_key:
            raise GenerationError(f"table '{table.name}' has no primary key")
        others = [col for col in table.columns if not col.is_primary_key]
        if not others:
            raise GenerationError(f"table '{table.name}' has no column besides its primary key")
        weights = np.array([col.selection_weight for col in others], dtype=np.float64)
        if weights.sum() <= 0:
            weights = np.ones(len(others))
        chosen = others[int(rng.choice(len(others), p=weights / weights.sum()))]
        pairs[table.name] = (table.primary_key[0].name, chosen.name)
    return pairs


class ExampleDiscarded(GenerationError):
    """The generated SQL failed the gate after its repair attempt."""

    def __init__(self, reason: str, raw_sql: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.raw_sql = raw_sql


@dataclass
class GeneratedExample:
    """A validated pair with the selection and model calls that produced it."""

    question: str
    sql: str
    tables: List[str]
    columns: Dict[str, Tuple[str, str]]
    draft_question: str = ""
    calls: List[LLMCall] = field(default_factory=list)

    @property
    def retries(self) -> int:
        return sum(1 for call in self.calls if call.attempt > 1)


@dataclass(frozen=True)
class Discard:
    """One failed attempt as written to the discard log."""

    attempt: int
    reason: str
    raw_sql: str

    def to_dict(self) -> Dict[str, Any]:
        return {"attempt": self.attempt, "reason": self.reason, "raw_sql": self.raw_sql}


def _sql_gate(selected: Sequence[str]):
    wanted = {fold(t) for t in selected}

    def check(sql: str) -> None:
        try:
            found = {fold(t) for t in from_tables(sql)}
        except SQLAnalysisError:
            raise ResponseParseError(UNPARSEABLE, sql) from None
        if found - wanted:
            raise ResponseParseError(OUTSIDE_SELECTION, sql)
        if wanted - found:
            raise ResponseParseError(SELECTED_MISSING, sql)

    return check


def create_example(
    n: int,
    backend: Optional[ExecutionBackend],
    schema: RelationalSchema,
    doc: DatabaseDoc,
    rng: np.random.Generator,
    gateway: LLMGateway,
    config: Optional[GenerationConfig] = None,
    graph: Optional[ReferentialGraph] = None,
) -> GeneratedExample:
    """One (question, SQL) pair; raises ``ExampleDiscarded`` when the SQL fails the gate twice."""
    config = config or GenerationConfig()
    tables = select_tables(n, schema, rng, graph, config.connect_retries)
    columns = select_columns(tables, schema, rng)
    ddl = render_ddl(schema, tables, {t: set(pair) for t, pair in columns.items()})

    samples: List[str] = []
    hints: List[str] = []
    for table, pair in columns.items():
        for column in pair:
            values = sample_column_values(backend, schema, table, column, config.sample_values) if backend else []
            if values:
                samples.append(f"{table}.{column}: " + ", ".join(_literal(v) for v in values))
            hint = restriction_hint(
                schema.table(table).column(column),
                table=table,
                is_key=schema.is_key_column(table, column),
                sample=values[0] if values else None,
                policy=config.restriction_policy,
            )
            hints.append(f"- {hint.text}")

    calls: List[LLMCall] = []
    draft = gateway.ask(
        PromptKind.SYNTH_CREATE_QUESTION,
        {"ddl": ddl, "samples": samples or "(no sample values)", "hints": hints},
        Expected.TEXT,
        on_call=calls.append,
    )
    try:
        sql = gateway.ask(
            PromptKind.SYNTH_GENERATE_SQL,
            {"question": draft, "ddl": ddl, "hints": hints},
            Expected.FENCED_SQL,
            validate=_sql_gate(tables),
            on_call=calls.append,
        )
    except ResponseParseError as e:
        reason = str(e) if str(e) in DISCARD_REASONS else UNPARSEABLE
        raise ExampleDiscarded(reason, e.raw) from e
    question = gateway.ask(
        PromptKind.SYNTH_IMPROVE_QUESTION,
        {"question": draft, "sql": sql, "documentation": doc.render(tables)},
        Expected.TEXT,
        on_call=calls.append,
    )
    return GeneratedExample(question, sql, tables, columns, draft, calls)


def draw_table_count(config: GenerationConfig, rng: np.random.Generator) -> int:
    """Number of tables for one attempt, drawn from the configured distribution."""
    counts = sorted(config.table_count_distribution)
    probabilities = np.array([config.table_count_distribution[n] for n in counts], dtype=np.float64)
    return counts[int(rng.choice(len(counts), p=probabilities / probabilities.sum()))]


def attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    """Independent stream per attempt index."""
    return np.random.default_rng([seed, attempt])


def generate_dataset(
    config: GenerationConfig,
    schema: RelationalSchema,
    backend: Optional[ExecutionBackend],
    doc: DatabaseDoc,
    gateway: LLMGateway,
    embedder: Optional[Embedder] = None,
    discards: Optional[List[Discard]] = None,
) -> ExampleStore:
    """Generate until ``examples_target`` pairs validate or the attempt budget runs out.

    An attempt that fails for any generation or parse reason is appended to
    ``discards`` and the run moves on to the next attempt.
    """
    graph = build_referential_graph(schema)
    store = ExampleStore(embedder=embedder)
    budget = config.attempt_budget
    window = max(1, config.concurrency)

    def run(attempt: int) -> Union[GeneratedExample, Discard]:
        rng = attempt_rng(config.rng_seed, attempt)
        n = draw_table_count(config, rng)
        try:
            return create_example(n, backend, schema, doc, rng, gateway, config, graph)
        except ExampleDiscarded as e:
            return Discard(attempt, e.reason, e.raw_sql)
        except ResponseParseError as e:
            return Discard(attempt, str(e), e.raw)
        except GenerationError as e:
            return Discard(attempt, str(e), "")

    attempt = 0
    with ThreadPoolExecutor(max_workers=window) as pool:
        while len(store) < config.examples_target and attempt < budget:
            indexes = range(attempt, min(budget, attempt + window))
            for index, outcome in zip(indexes, pool.map(run, indexes)):
                attempt = index + 1
                if isinstance(outcome, Discard):
                    logger.info("Attempt %d discarded: %s", index, outcome.reason)
                    if discards is not None:
                        discards.append(outcome)
                    continue
                store.add(ExamplePair(f"syn-{len(store) + 1:04d}", outcome.question, outcome.sql))
                if len(store) >= config.examples_target:
                    break

    if len(store) < config.examples_target:
        logger.warning(
            "Attempt budget of %d exhausted with %d of %d examples", budget, len(store), config.examples_target
        )
    return store


def write_discard_log(discards: Iterable[Discard], path: Union[str, Path]) -> None:
    """One JSON line per discarded attempt."""
    with open(path, "w", encoding="utf-8") as f:
        for discard in discards:
            f.write(json.dumps(discard.to_dict(), ensure_ascii=False) + "\n")
