"""Schema linking and SQL compilation over a synthesized view, with ablation modes."""

import hashlib
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .database import ExecutionBackend, ResultTable, first_rows
from .errors import ConfigError, ExecutionBackendError, KwsqlError, PipelineError, ResponseParseError, SQLAnalysisError
from .examples import ExampleStore, intercalate, retrieve_similar, rewrite_from_clause
from .keywords import KeywordDictionary, MatchSet, match_keywords, tables_of
from .parser import KeywordSplitter
from .prompts import (
    Expected,
    PromptKind,
    render_matches,
    render_rows,
    render_schema_listing,
    render_sql_examples,
    render_table_examples,
)
from .providers.gateway import LLMCall, LLMGateway
from .schema import ReferentialGraph, RelationalSchema, build_referential_graph, fold
from .sqltext import from_tables
from .views import (
    DEFAULT_STRIP_PREFIXES,
    ViewDefinition,
    inline_view,
    render_view_ddl,
    synthesize_view,
    view_select_sql,
    view_to_dict,
)

logger = logging.getLogger(__name__)

DEFAULT_K = 8
DEFAULT_ROW_SAMPLES = 3
MAX_SUB_QUESTIONS = 4


class AblationMode(str, Enum):
    """Which evidence sources feed schema linking."""

    LLM_ONLY = "llm_only"
    DANKE_ONLY = "danke_only"
    LLM_DFE = "llm_dfe"
    LLM_DANKE = "llm_danke"
    LLM_DFE_DANKE = "llm_dfe_danke"
    COMPLETE = "complete"

    @property
    def uses_llm_linking(self) -> bool:
        return self not in (AblationMode.DANKE_ONLY, AblationMode.LLM_DANKE)

    @property
    def uses_llm_keywords(self) -> bool:
        return self in (AblationMode.LLM_DANKE, AblationMode.LLM_DFE_DANKE, AblationMode.COMPLETE)

    @property
    def uses_split_keywords(self) -> bool:
        return self in (AblationMode.DANKE_ONLY, AblationMode.COMPLETE)

    @property
    def uses_examples(self) -> bool:
        return self in (AblationMode.LLM_DFE, AblationMode.LLM_DFE_DANKE, AblationMode.COMPLETE)


def digest(value: Any) -> str:
    """Short stable hash of a string or JSON-serializable value."""
    text = value if isinstance(value, str) else json.dumps(value, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class StepRecord:
    """Digests of one step's input and output; ``raw`` is kept for verbose traces."""

    step: str
    input_digest: str
    output_digest: str
    raw: Optional[str] = None
    llm: bool = False

    def to_dict(self, verbose: bool = False) -> Dict[str, Any]:
        data = {"step": self.step, "input_digest": self.input_digest, "output_digest": self.output_digest}
        if verbose and self.raw is not None:
            data["raw"] = self.raw
        return data


@dataclass
class Trace:
    """Ordered step records and warnings for one question."""

    records: List[StepRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def record(self, step: str, inputs: Any, output: Any, raw: Optional[str] = None) -> None:
        if raw is None:
            raw = output if isinstance(output, str) else json.dumps(output, ensure_ascii=False, default=str)
        self.records.append(StepRecord(step, digest(inputs), digest(output), raw))

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def listener(self, step: str) -> Callable[[LLMCall], None]:
        """Callback recording every model call of ``step``, retries included."""
        def on_call(call: LLMCall) -> None:
            name = step if call.attempt == 1 else f"{step} (retry {call.attempt - 1})"
            self.records.append(StepRecord(name, call.prompt_digest[:16], digest(call.raw), call.raw, llm=True))

        return on_call

    @property
    def llm_calls(self) -> List[StepRecord]:
        return [record for record in self.records if record.llm]

    def to_dict(self, verbose: bool = False) -> Dict[str, Any]:
        return {"steps": [r.to_dict(verbose) for r in self.records], "warnings": list(self.warnings)}

    def save(self, path: Union[str, Path], verbose: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(verbose), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


@dataclass
class PipelineDeps:
    """Everything a question needs: schema, dictionary, examples, model and database."""

    schema: RelationalSchema
    dictionary: KeywordDictionary
    store: ExampleStore
    gateway: Optional[LLMGateway] = None
    backend: Optional[ExecutionBackend] = None
    graph: Optional[ReferentialGraph] = None
    k: int = DEFAULT_K
    row_samples: int = DEFAULT_ROW_SAMPLES
    max_sub_questions: int = MAX_SUB_QUESTIONS
    strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES
    splitter: KeywordSplitter = field(default_factory=KeywordSplitter)

    def __post_init__(self):
        if self.graph is None:
            self.graph = build_referential_graph(self.schema)
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        self.max_sub_questions = max(1, min(self.max_sub_questions, MAX_SUB_QUESTIONS))

    def require_gateway(self) -> LLMGateway:
        if self.gateway is None:
            raise ConfigError("no LLM backend configured; set scripted_path or http_endpoint")
        return self.gateway


@dataclass
class LinkResult:
    """Tables chosen for a question and the keyword evidence behind them."""

    tables: List[str]
    matches: MatchSet
    keywords: List[str]
    trace: Trace


@dataclass
class CompilationResult:
    """Final SQL over the view and over base tables, with the trace that produced it."""

    view: ViewDefinition
    sql_over_view: str
    sql_over_base: str
    sub_questions: List[str]
    examples_used: List[str]
    trace: Trace
    link: Optional[LinkResult] = None

    def to_dict(self, verbose: bool = False) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "view": view_to_dict(self.view),
            "sql_over_view": self.sql_over_view,
            "sql_over_base": self.sql_over_base,
            "sub_questions": list(self.sub_questions),
            "examples_used": list(self.examples_used),
            "trace": self.trace.to_dict(verbose),
        }
        if self.link is not None:
            data["tables"] = list(self.link.tables)
        return data


@contextmanager
def _stage(step: str, trace: Trace) -> Iterator[None]:
    try:
        yield
    except (PipelineError, ConfigError):
        raise
    except KwsqlError as e:
        raise PipelineError(str(e), step, trace, e) from e


def _dedupe(items: Sequence[str]) -> List[str]:
    seen = set()
    kept = []
    for item in items:
        item = item.strip()
        if item and item.casefold() not in seen:
            seen.add(item.casefold())
            kept.append(item)
    return kept


def extract_keywords(question: str, gateway: LLMGateway, trace: Optional[Trace] = None) -> List[str]:
    """Keywords the model finds in ``question``, deduplicated."""
    keywords = gateway.ask(
        PromptKind.KEYWORD_EXTRACTION,
        {"question": question},
        Expected.JSON_ARRAY_OF_STRINGS,
        on_call=trace.listener("keyword_extraction") if trace is not None else None,
    )
    return _dedupe(keywords)


def schema_link(
    question: str, mode: Union[AblationMode, str], deps: PipelineDeps, trace: Optional[Trace] = None
) -> LinkResult:
    """Linked tables and keyword matches for a question under one ablation mode."""
    mode = AblationMode(mode)
    trace = trace if trace is not None else Trace()
    if not question.strip():
        raise PipelineError("question is empty", "schema_linking", trace)

    keywords: List[str] = []
    if mode.uses_llm_keywords:
        gateway = deps.require_gateway()
        with _stage("keyword_extraction", trace):
            keywords = extract_keywords(question, gateway, trace)
    if mode.uses_split_keywords:
        split = deps.splitter.split(question)
        trace.record("keyword_split", question, split)
        keywords = _dedupe(keywords + split)

    matches = MatchSet()
    if mode.uses_llm_keywords or mode.uses_split_keywords:
        matches = match_keywords(deps.dictionary, keywords)
        trace.record("keyword_match", keywords, matches.to_dict())

    if not mode.uses_llm_linking:
        tables = tables_of(matches)
    else:
        context: Dict[str, Any] = {"question": question, "schema": render_schema_listing(deps.schema)}
        if mode.uses_llm_keywords:
            context["matches"] = render_matches(matches)
        if mode.uses_examples:
            similar = retrieve_similar(deps.store, question, deps.k)
            trace.record("dfe_linking", question, [example.id for example in similar])
            context["examples"] = render_table_examples((e.question, e.tables) for e in similar)
        with _stage("schema_linking", trace):
            names = deps.require_gateway().ask(
                PromptKind.SCHEMA_LINKING,
                context,
                Expected.JSON_ARRAY_OF_STRINGS,
                on_call=trace.listener("schema_linking"),
            )
        tables = set()
        for name in names:
            if deps.schema.has_table(name):
                tables.add(deps.schema.canonical(name))
            else:
                trace.warn(f"dropped unknown table '{name}' from schema linking")

    ordered = sorted(tables, key=deps.schema.order)
    logger.info("Linked %s to %s (%s)", question, ordered, mode.value)
    return LinkResult(ordered, matches, keywords, trace)


def decompose(
    question: str, gateway: LLMGateway, max_sub_questions: int = MAX_SUB_QUESTIONS, trace: Optional[Trace] = None
) -> List[str]:
    """At least one sub-question; an atomic question comes back as itself."""
    if not question.strip():
        raise PipelineError("question is empty", "question_decomposition", trace)
    parts = gateway.ask(
        PromptKind.QUESTION_DECOMPOSITION,
        {"question": question, "max_sub_questions": max_sub_questions},
        Expected.JSON_ARRAY_OF_STRINGS,
        on_call=trace.listener("question_decomposition") if trace is not None else None,
    )
    parts = _dedupe(parts)
    if not parts:
        message = "empty decomposition; using the question itself"
        if trace is not None:
            trace.warn(message)
        else:
            logger.warning(message)
        return [question]
    if len(parts) > max_sub_questions:
        if trace is not None:
            trace.warn(f"decomposition returned {len(parts)} sub-questions; keeping {max_sub_questions}")
        parts = parts[:max_sub_questions]
    return parts


def _shape_gate(view: ViewDefinition) -> Callable[[str], None]:
    def check(sql: str) -> None:
        try:
            tables = {fold(t) for t in from_tables(sql)}
        except SQLAnalysisError as e:
            raise ResponseParseError(f"unparseable SQL: {e}", sql) from None
        if tables != {fold(view.name)}:
            raise ResponseParseError(f"query must read only from {view.name}", sql)

    return check


def _row_samples(view: ViewDefinition, deps: PipelineDeps, trace: Trace) -> Optional[ResultTable]:
    if deps.backend is None:
        trace.warn("no execution backend; row samples omitted")
        return None
    keys = [
        c.output_name for c in view.projected_columns
        if deps.schema.table(c.table).column(c.column).is_primary_key
    ]
    try:
        return first_rows(deps.backend, view_select_sql(view), keys, deps.row_samples)
    except ExecutionBackendError as e:
        trace.warn(f"row samples unavailable: {e}")
        return None


def compile(
    question: str, link: LinkResult, deps: PipelineDeps, k: Optional[int] = None, trace: Optional[Trace] = None
) -> CompilationResult:
    """SQL over a view of the linked tables, then inlined over the base tables."""
    k = k or deps.k
    trace = trace if trace is not None else link.trace
    gateway = deps.require_gateway()
    if not link.tables:
        raise PipelineError("schema linking selected no tables", "view", trace)

    with _stage("view", trace):
        view = synthesize_view(deps.schema, link.tables, graph=deps.graph, strip_prefixes=deps.strip_prefixes)
    trace.record("view_synthesis", list(link.tables), view_to_dict(view))

    with _stage("question_decomposition", trace):
        sub_questions = decompose(question, gateway, deps.max_sub_questions, trace)

    per_list = math.ceil(k / len(sub_questions))
    lists = [retrieve_similar(deps.store, sub, per_list, table_filter=link.tables) for sub in sub_questions]
    examples = intercalate(lists, k)
    trace.record("dfe_compilation", sub_questions, [example.id for example in examples])

    rewritten: List[Tuple[str, str]] = []
    with _stage("examples", trace):
        for example in examples:
            warnings: List[str] = []
            rewritten.append((example.question, rewrite_from_clause(example.sql, view, warnings)))
            for message in warnings:
                trace.warn(f"{example.id}: {message}")

    rows = _row_samples(view, deps, trace)
    if rows is not None:
        trace.record("row_samples", view.name, rows.to_dict())

    context = {
        "question": question,
        "view_name": view.name,
        "view_ddl": render_view_ddl(view),
        "matches": render_matches(link.matches),
        "rows": render_rows(rows.columns, rows.rows) if rows is not None else "(no rows)",
        "examples": render_sql_examples(rewritten),
    }
    with _stage("sql_compilation", trace):
        sql_over_view = gateway.ask(
            PromptKind.SQL_COMPILATION,
            context,
            Expected.FENCED_SQL,
            validate=_shape_gate(view),
            on_call=trace.listener("sql_compilation"),
        )
    with _stage("inline", trace):
        sql_over_base = inline_view(sql_over_view, view)
    trace.record("inline", sql_over_view, sql_over_base)

    return CompilationResult(
        view=view,
        sql_over_view=sql_over_view,
        sql_over_base=sql_over_base,
        sub_questions=sub_questions,
        examples_used=[example.id for example in examples],
        trace=trace,
        link=link,
    )


def answer(
    question: str, mode: Union[AblationMode, str], deps: PipelineDeps, k: Optional[int] = None
) -> CompilationResult:
    """Answer one question end to end; the trace covers every step."""
    trace = Trace()
    deps.require_gateway()
    link = schema_link(question, mode, deps, trace)
    if not link.tables:
        raise PipelineError("schema linking selected no tables", "schema_linking", trace)
    return compile(question, link, deps, k, trace)
