"""Embedded execution backend and value sources."""

import json
import logging
import sqlite3
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import ExecutionBackendError, QueryError
from .sqltext import quote_identifier
from .schema import RelationalSchema

logger = logging.getLogger(__name__)

SQLITE_PREFIX = "sqlite:///"


@dataclass
class ResultTable:
    """Column names and row tuples of one executed query."""

    columns: List[str]
    rows: List[Tuple[Any, ...]] = field(default_factory=list)

    def __post_init__(self):
        width = len(self.columns)
        for row in self.rows:
            if len(row) != width:
                raise ValueError(f"row arity {len(row)} does not match {width} columns")

    def to_dict(self) -> Dict[str, Any]:
        return {"columns": list(self.columns), "rows": [list(row) for row in self.rows]}


class ExecutionBackend(ABC):
    """A connected database that runs read queries."""

    @abstractmethod
    def run(self, sql: str) -> ResultTable:
        """Execute ``sql``; statements the engine rejects raise ``QueryError``."""
        pass

    def close(self) -> None:
        pass


class SQLiteBackend(ExecutionBackend):
    """sqlite3 connection shared across threads behind a lock."""

    def __init__(self, path: str = ":memory:", seed_script: Optional[Union[str, Path]] = None):
        self.path = path
        self._lock = threading.Lock()
        try:
            self._conn = sqlite3.connect(path, check_same_thread=False)
        except sqlite3.Error as e:
            raise ExecutionBackendError(f"cannot open database {path}: {e}") from e
        if seed_script is not None:
            try:
                script = Path(seed_script).read_text(encoding="utf-8")
                with self._lock:
                    self._conn.executescript(script)
            except (OSError, sqlite3.Error) as e:
                raise ExecutionBackendError(f"cannot seed database from {seed_script}: {e}") from e
            logger.info("Seeded %s from %s", path, seed_script)

    @classmethod
    def from_url(cls, url: str, seed_script: Optional[Union[str, Path]] = None) -> "SQLiteBackend":
        """Open a ``sqlite:///path`` URL; an empty path means an in-memory database."""
        if not url.startswith(SQLITE_PREFIX):
            raise ExecutionBackendError(f"unsupported database url '{url}'")
        return cls(url[len(SQLITE_PREFIX):] or ":memory:", seed_script)

    def run(self, sql: str) -> ResultTable:
        with self._lock:
            try:
                cursor = self._conn.execute(sql)
                rows = cursor.fetchall()
            except sqlite3.ProgrammingError as e:
                if "closed" in str(e).lower():
                    raise ExecutionBackendError(f"database connection is closed: {e}") from e
                raise QueryError(str(e), sql) from e
            except sqlite3.Error as e:
                raise QueryError(str(e), sql) from e
            columns = [d[0] for d in cursor.description or []]
        return ResultTable(columns, [tuple(row) for row in rows])

    def close(self) -> None:
        with self._lock:
            self._conn.close()


def read_value_source(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """Rows of a JSONL value source ({"table","column","value"} per line)."""
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ExecutionBackendError(f"{path}:{number}: malformed value row: {e}") from e


def database_values(backend: ExecutionBackend, schema: RelationalSchema) -> Iterator[Tuple[str, str, Any]]:
    """Distinct values of every indexed column, read from the database."""
    for table in schema.tables:
        for col in table.columns:
            if not col.is_indexed_for_values:
                continue
            name = quote_identifier(col.name)
            result = backend.run(
                f"SELECT DISTINCT {name} FROM {quote_identifier(table.name)} WHERE {name} IS NOT NULL ORDER BY {name}"
            )
            for (value,) in result.rows:
                yield table.name, col.name, value


def sample_column_values(
    backend: ExecutionBackend, schema: RelationalSchema, table: str, column: str, limit: int
) -> List[Any]:
    """First ``limit`` distinct non-null values of a column in primary-key order."""
    table_def = schema.table(table)
    name = quote_identifier(table_def.column(column).name)
    order = ", ".join(quote_identifier(c.name) for c in table_def.primary_key) or name
    result = backend.run(
        f"SELECT {name} FROM {quote_identifier(table_def.name)} WHERE {name} IS NOT NULL ORDER BY {order}"
    )
    values: List[Any] = []
    for (value,) in result.rows:
        if value not in values:
            values.append(value)
            if len(values) >= limit:
                break
    return values


def first_rows(backend: ExecutionBackend, sql: str, order_by: Sequence[str], limit: int) -> ResultTable:
    """First ``limit`` rows of ``sql`` ordered by the named output columns."""
    ordering = f" ORDER BY {', '.join(map(quote_identifier, order_by))}" if order_by else ""
    return backend.run(f"SELECT * FROM ({sql}) sample{ordering} LIMIT {int(limit)}")
