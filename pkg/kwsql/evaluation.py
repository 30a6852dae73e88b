"""Benchmark loading, difficulty classes, execution accuracy and linking metrics."""

import json
import logging
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .database import ExecutionBackend, ResultTable
from .errors import BenchmarkError, ConfigError, ExecutionBackendError, KwsqlError, QueryError
from .pipeline import AblationMode, PipelineDeps, compile, schema_link
from .schema import fold
from .sqltext import analyze, from_tables, has_order_by

logger = logging.getLogger(__name__)

EXHAUSTIVE_COLUMN_LIMIT = 8
_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}(?:[ T]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?)?$")


class Difficulty(str, Enum):
    """Question class by the number of SQL constructs in its gold query."""

    SIMPLE = "simple"
    MEDIUM = "medium"
    COMPLEX = "complex"


class Verdict(str, Enum):
    """Outcome of one benchmark question."""

    CORRECT = "correct"
    WRONG = "wrong"
    FAILED = "failed"


def construct_count(sql: str) -> int:
    """GROUP BY, ORDER BY, LIMIT, set operators, subqueries, extra aggregates and wide selects."""
    c = analyze(sql).construct_counts()
    return (
        c.group_by + c.order_by + c.limits + c.set_operators + c.subqueries
        + max(0, c.aggregates - 1)
        + (1 if c.select_items > 2 else 0)
    )


def classify_difficulty(sql: str) -> Difficulty:
    """Simple with no constructs, medium with one or two, complex beyond."""
    count = construct_count(sql)
    if count == 0:
        return Difficulty.SIMPLE
    if count <= 2:
        return Difficulty.MEDIUM
    return Difficulty.COMPLEX


@dataclass
class BenchmarkQuestion:
    id: str
    question: str
    gold_sql: str
    difficulty: Difficulty

    @property
    def gold_tables(self) -> Set[str]:
        return set(from_tables(self.gold_sql))


def load_benchmark(path: Union[str, Path]) -> List[BenchmarkQuestion]:
    """Questions of a JSONL benchmark; a declared difficulty overrides the computed one."""
    questions = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise BenchmarkError(f"cannot open benchmark {path}: {e}") from e
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                question = BenchmarkQuestion(str(raw["id"]), raw["question"], raw["gold_sql"], Difficulty.SIMPLE)
                question.difficulty = (
                    Difficulty(raw["difficulty"]) if raw.get("difficulty") else classify_difficulty(question.gold_sql)
                )
                from_tables(question.gold_sql)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise BenchmarkError(f"{path}: line {number}: {e}") from e
            questions.append(question)
    return questions


@dataclass
class ExecutionOutcome:
    table: Optional[ResultTable] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.table is not None


def execute(sql: str, backend: ExecutionBackend) -> ExecutionOutcome:
    """Run ``sql``; rejected statements become a failed outcome, connection failures raise."""
    try:
        return ExecutionOutcome(table=backend.run(sql))
    except QueryError as e:
        return ExecutionOutcome(error=str(e))


def normalize_value(value: Any) -> Any:
    """Common form for comparing cells: floats for numbers, ISO text for dates, stripped strings."""
    if value is None:
        return None
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float, Decimal)):
        return round(float(value), 6) + 0.0
    if isinstance(value, str):
        text = value.strip()
        if _ISO_DATE.match(text):
            try:
                moment = datetime.fromisoformat(text.replace(" ", "T"))
            except ValueError:
                return text
            if len(text) == 10 or moment.time() == datetime.min.time():
                return moment.date().isoformat()
            return moment.isoformat(sep=" ")
        return text
    return value


def _columns(table: ResultTable) -> List[List[Any]]:
    width = len(table.columns)
    return [[normalize_value(row[i]) for row in table.rows] for i in range(width)]


def results_equivalent(gold: ResultTable, predicted: ResultTable, order_sensitive: bool = False) -> bool:
    """Value-based comparison ignoring column names; extra predicted columns are tolerated."""
    if len(gold.rows) != len(predicted.rows) or len(gold.columns) > len(predicted.columns):
        return False
    gold_cols = _columns(gold)
    pred_cols = _columns(predicted)
    pred_bags = [Counter(col) for col in pred_cols]
    candidates = [[j for j, bag in enumerate(pred_bags) if bag == Counter(col)] for col in gold_cols]
    if any(not options for options in candidates):
        return False

    gold_rows = list(zip(*gold_cols)) if gold_cols else [()] * len(gold.rows)
    expected = gold_rows if order_sensitive else Counter(gold_rows)

    def fits(mapping: Sequence[int]) -> bool:
        rows = list(zip(*(pred_cols[j] for j in mapping))) if mapping else [()] * len(predicted.rows)
        return (rows if order_sensitive else Counter(rows)) == expected

    if len(gold_cols) > EXHAUSTIVE_COLUMN_LIMIT:
        used: Set[int] = set()
        mapping = []
        for options in candidates:
            free = [j for j in options if j not in used]
            if not free:
                return False
            used.add(free[0])
            mapping.append(free[0])
        return fits(mapping)

    def search(i: int, mapping: List[int]) -> bool:
        if i == len(candidates):
            return fits(mapping)
        for j in candidates[i]:
            if j not in mapping:
                mapping.append(j)
                if search(i + 1, mapping):
                    return True
                mapping.pop()
        return False

    return search(0, [])


@dataclass(frozen=True)
class LinkMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, float]:
        return {"precision": round(self.precision, 4), "recall": round(self.recall, 4), "f1": round(self.f1, 4)}


def question_link_metrics(predicted: Iterable[str], gold: Iterable[str]) -> LinkMetrics:
    """Precision, recall and F1 of one predicted table set; empty sets score as agreeing."""
    pred = {fold(t) for t in predicted}
    truth = {fold(t) for t in gold}
    hits = len(pred & truth)
    if not pred:
        precision = 1.0 if not truth else 0.0
    else:
        precision = hits / len(pred)
    if not truth:
        recall = 1.0
    else:
        recall = hits / len(truth)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return LinkMetrics(precision, recall, f1)


def schema_linking_metrics(predicted: Sequence[Iterable[str]], gold: Sequence[Iterable[str]]) -> LinkMetrics:
    """Macro-averaged precision, recall and F1 over questions."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predictions for {len(gold)} gold sets")
    if not gold:
        return LinkMetrics(0.0, 0.0, 0.0)
    per_question = [question_link_metrics(p, g) for p, g in zip(predicted, gold)]
    count = len(per_question)
    return LinkMetrics(
        sum(m.precision for m in per_question) / count,
        sum(m.recall for m in per_question) / count,
        sum(m.f1 for m in per_question) / count,
    )


@dataclass
class QuestionResult:
    """Verdict, SQL and results recorded for one benchmark question."""

    id: str
    question: str
    difficulty: Difficulty
    gold_sql: str
    verdict: Verdict = Verdict.FAILED
    sql_over_view: Optional[str] = None
    sql_over_base: Optional[str] = None
    predicted_tables: List[str] = field(default_factory=list)
    error: Optional[str] = None
    gold_result: Optional[ResultTable] = None
    predicted_result: Optional[ResultTable] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def gold_tables(self) -> Set[str]:
        return set(from_tables(self.gold_sql))

    @property
    def is_near_miss(self) -> bool:
        """A wrong answer with the gold row count that shares at least one full column with the gold result."""
        if self.verdict is not Verdict.WRONG or self.gold_result is None or self.predicted_result is None:
            return False
        if len(self.gold_result.rows) != len(self.predicted_result.rows):
            return False
        predicted = [Counter(col) for col in _columns(self.predicted_result)]
        return any(Counter(col) in predicted for col in _columns(self.gold_result))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "difficulty": self.difficulty.value,
            "constructs": construct_count(self.gold_sql),
            "verdict": self.verdict.value,
            "gold_sql": self.gold_sql,
            "sql_over_view": self.sql_over_view,
            "sql_over_base": self.sql_over_base,
            "gold_tables": sorted(self.gold_tables, key=fold),
            "predicted_tables": list(self.predicted_tables),
            "error": self.error,
            "near_miss": self.is_near_miss,
            "warnings": list(self.warnings),
        }


@dataclass
class EvalReport:
    """Results of one benchmark run, with per-difficulty accuracy and linking scores."""

    mode: str
    results: List[QuestionResult] = field(default_factory=list)
    elapsed: float = 0.0

    def _subset(self, difficulty: Optional[Difficulty]) -> List[QuestionResult]:
        return [r for r in self.results if difficulty is None or r.difficulty is difficulty]

    def count(self, difficulty: Optional[Difficulty] = None) -> int:
        return len(self._subset(difficulty))

    def correct(self, difficulty: Optional[Difficulty] = None) -> int:
        return sum(1 for r in self._subset(difficulty) if r.verdict is Verdict.CORRECT)

    def accuracy(self, difficulty: Optional[Difficulty] = None) -> float:
        """Share of correct answers, zero for an empty subset."""
        total = self.count(difficulty)
        return self.correct(difficulty) / total if total else 0.0

    def linking(self, difficulty: Optional[Difficulty] = None) -> LinkMetrics:
        """Macro-averaged linking metrics against the gold query tables."""
        subset = self._subset(difficulty)
        return schema_linking_metrics([r.predicted_tables for r in subset], [r.gold_tables for r in subset])

    @property
    def near_misses(self) -> List[QuestionResult]:
        return [r for r in self.results if r.is_near_miss]

    def to_dict(self) -> Dict[str, Any]:
        rows: Dict[str, Any] = {}
        for difficulty in Difficulty:
            rows[difficulty.value] = {
                "questions": self.count(difficulty),
                "correct": self.correct(difficulty),
                "accuracy": round(self.accuracy(difficulty), 4),
                "linking": self.linking(difficulty).to_dict(),
            }
        return {
            "mode": self.mode,
            "elapsed_seconds": round(self.elapsed, 3),
            "total": {
                "questions": self.count(),
                "correct": self.correct(),
                "accuracy": round(self.accuracy(), 4),
                "linking": self.linking().to_dict(),
            },
            "by_difficulty": rows,
            "questions": [r.to_dict() for r in self.results],
        }

    def render(self) -> str:
        """Plain-text accuracy table followed by the linking table."""
        lines = [f"Mode: {self.mode}", "", f"{'Difficulty':<12}{'#Questions':>11}{'#Correct':>10}{'Accuracy':>10}"]
        for label, difficulty in [(d.value, d) for d in Difficulty] + [("Total", None)]:
            lines.append(
                f"{label:<12}{self.count(difficulty):>11}{self.correct(difficulty):>10}"
                f"{self.accuracy(difficulty):>10.2f}"
            )
        lines += ["", f"{'Linking':<12}{'Precision':>11}{'Recall':>10}{'F1':>10}"]
        for label, difficulty in [(d.value, d) for d in Difficulty] + [("Total", None)]:
            m = self.linking(difficulty)
            lines.append(f"{label:<12}{m.precision:>11.3f}{m.recall:>10.3f}{m.f1:>10.3f}")
        lines += ["", f"Elapsed: {self.elapsed:.2f} s"]
        return "\n".join(lines)

    def save(self, directory: Union[str, Path]) -> Tuple[Path, Path, Path]:
        """Write report.json, report.txt and near_misses.jsonl under ``directory``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        json_path, text_path, review_path = out / "report.json", out / "report.txt", out / "near_misses.jsonl"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        text_path.write_text(self.render() + "\n", encoding="utf-8")
        write_near_misses(self, review_path)
        return json_path, text_path, review_path


def write_near_misses(report: EvalReport, path: Union[str, Path]) -> int:
    """Manual-review export; verdicts are not changed."""
    misses = report.near_misses
    with open(path, "w", encoding="utf-8") as f:
        for r in misses:
            entry = {
                "id": r.id,
                "question": r.question,
                "verdict": r.verdict.value,
                "gold_sql": r.gold_sql,
                "predicted_sql": r.sql_over_base,
                "gold": r.gold_result.to_dict() if r.gold_result else None,
                "predicted": r.predicted_result.to_dict() if r.predicted_result else None,
            }
            f.write(json.dumps(entry, ensure_ascii=False, default=str) + "\n")
    return len(misses)


def evaluate_question(question: BenchmarkQuestion, mode: AblationMode, deps: PipelineDeps) -> QuestionResult:
    """Answer one question and compare its result with the gold query's."""
    result = QuestionResult(question.id, question.question, question.difficulty, question.gold_sql)
    if deps.backend is None:
        raise ConfigError("evaluation needs an execution backend; set database_url")
    try:
        link = schema_link(question.question, mode, deps)
        result.predicted_tables = list(link.tables)
        compiled = compile(question.question, link, deps)
        result.sql_over_view = compiled.sql_over_view
        result.sql_over_base = compiled.sql_over_base
        result.warnings = list(compiled.trace.warnings)
    except ConfigError:
        raise
    except KwsqlError as e:
        result.error = f"{e.step}: {e}"
        logger.info("Question %s failed at %s: %s", question.id, e.step, e)
        return result

    try:
        gold = execute(question.gold_sql, deps.backend)
        predicted = execute(result.sql_over_base or "", deps.backend)
    except ExecutionBackendError as e:
        result.error = f"execute: {e}"
        return result
    result.gold_result, result.predicted_result = gold.table, predicted.table
    if not gold.ok:
        result.error = f"gold query failed: {gold.error}"
    elif not predicted.ok:
        result.error = f"predicted query failed: {predicted.error}"
    else:
        assert gold.table is not None and predicted.table is not None
        equivalent = results_equivalent(gold.table, predicted.table, has_order_by(question.gold_sql))
        result.verdict = Verdict.CORRECT if equivalent else Verdict.WRONG
    return result


def run_benchmark(
    questions: Sequence[BenchmarkQuestion],
    mode: Union[AblationMode, str],
    deps: PipelineDeps,
    concurrency: int = 1,
) -> EvalReport:
    """Answer, execute and compare every question; per-question failures are recorded, not raised."""
    mode = AblationMode(mode)
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(lambda q: evaluate_question(q, mode, deps), questions))
    report = EvalReport(mode.value, results, time.perf_counter() - start)
    logger.info("Evaluated %d questions in %s mode: %d correct", report.count(), mode.value, report.correct())
    return report


@dataclass
class LinkingReport:
    """Linking metrics, predicted table sets and errors per ablation mode."""

    metrics: Dict[str, LinkMetrics]
    predictions: Dict[str, List[List[str]]]
    errors: Dict[str, List[Optional[str]]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            mode: {**metrics.to_dict(), "predictions": self.predictions[mode], "errors": self.errors[mode]}
            for mode, metrics in self.metrics.items()
        }

    def render(self) -> str:
        lines = [f"{'Method':<16}{'Precision':>11}{'Recall':>10}{'F1':>10}"]
        for mode, m in self.metrics.items():
            lines.append(f"{mode:<16}{m.precision:>11.3f}{m.recall:>10.3f}{m.f1:>10.3f}")
        return "\n".join(lines)


def run_linking_benchmark(
    questions: Sequence[BenchmarkQuestion],
    modes: Iterable[Union[AblationMode, str]],
    deps: PipelineDeps,
    concurrency: int = 1,
) -> LinkingReport:
    """Schema-linking precision, recall and F1 for each mode; a failed link counts as an empty prediction."""
    metrics: Dict[str, LinkMetrics] = {}
    predictions: Dict[str, List[List[str]]] = {}
    errors: Dict[str, List[Optional[str]]] = {}
    gold = [q.gold_tables for q in questions]

    for mode in (AblationMode(m) for m in modes):
        def link(question: BenchmarkQuestion) -> Tuple[List[str], Optional[str]]:
            try:
                return schema_link(question.question, mode, deps).tables, None
            except ConfigError:
                raise
            except KwsqlError as e:
                return [], f"{e.step}: {e}"

        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            outcomes = list(pool.map(link, questions))
        predictions[mode.value] = [tables for tables, _ in outcomes]
        errors[mode.value] = [error for _, error in outcomes]
        metrics[mode.value] = schema_linking_metrics(predictions[mode.value], gold)
    return LinkingReport(metrics, predictions, errors)
