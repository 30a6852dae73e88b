"""Relational schema model, referential graph and simplified DDL rendering."""

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import networkx as nx

from .errors import SchemaError
from .sqltext import quote_identifier

logger = logging.getLogger(__name__)


def fold(identifier: str) -> str:
    """Case-insensitive comparison key for identifiers."""
    return identifier.casefold()


def normalize_term(term: str) -> str:
    """Lowercase, fold accents and keep only alphanumerics."""
    decomposed = unicodedata.normalize("NFKD", term)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return re.sub(r"[\W_]+", "", stripped.casefold())


class DataType(str, Enum):
    """Column types the generators and prompts know about."""

    STRING = "string"
    INTEGER = "integer"
    DECIMAL = "decimal"
    DATE = "date"
    TIMESTAMP = "timestamp"
    BOOLEAN = "boolean"

    @property
    def sql_type(self) -> str:
        return _SQL_TYPES[self]

    @property
    def is_numeric(self) -> bool:
        return self in (DataType.INTEGER, DataType.DECIMAL)


_SQL_TYPES = {
    DataType.STRING: "TEXT",
    DataType.INTEGER: "INTEGER",
    DataType.DECIMAL: "DECIMAL",
    DataType.DATE: "DATE",
    DataType.TIMESTAMP: "TIMESTAMP",
    DataType.BOOLEAN: "BOOLEAN",
}

# Source-specific type names accepted at ingestion.
_TYPE_ALIASES = {
    "string": DataType.STRING, "text": DataType.STRING, "varchar": DataType.STRING,
    "varchar2": DataType.STRING, "nvarchar": DataType.STRING, "char": DataType.STRING,
    "clob": DataType.STRING,
    "integer": DataType.INTEGER, "int": DataType.INTEGER, "bigint": DataType.INTEGER,
    "smallint": DataType.INTEGER,
    "decimal": DataType.DECIMAL, "numeric": DataType.DECIMAL, "number": DataType.DECIMAL,
    "float": DataType.DECIMAL, "double": DataType.DECIMAL, "real": DataType.DECIMAL,
    "date": DataType.DATE,
    "timestamp": DataType.TIMESTAMP, "datetime": DataType.TIMESTAMP,
    "boolean": DataType.BOOLEAN, "bool": DataType.BOOLEAN,
}


def parse_data_type(name: str) -> DataType:
    key = re.sub(r"\(.*\)$", "", str(name).strip()).lower()
    if key not in _TYPE_ALIASES:
        raise SchemaError(f"unsupported column type '{name}'")
    return _TYPE_ALIASES[key]


@dataclass(frozen=True)
class ColumnDef:
    """A column with its documentation and value-index flag."""

    name: str
    data_type: DataType
    is_primary_key: bool = False
    is_indexed_for_values: bool = False
    description: Optional[str] = None
    synonyms: Tuple[str, ...] = ()
    selection_weight: float = 1.0


@dataclass(frozen=True)
class TableDef:
    """A table; column lookups ignore case."""

    name: str
    columns: Tuple[ColumnDef, ...]
    description: Optional[str] = None
    synonyms: Tuple[str, ...] = ()
    selection_weight: float = 1.0

    def column(self, name: str) -> ColumnDef:
        for col in self.columns:
            if fold(col.name) == fold(name):
                return col
        raise SchemaError(f"unknown column '{name}' in table '{self.name}'")

    def has_column(self, name: str) -> bool:
        return any(fold(col.name) == fold(name) for col in self.columns)

    @property
    def primary_key(self) -> List[ColumnDef]:
        return [col for col in self.columns if col.is_primary_key]


@dataclass(frozen=True)
class ForeignKey:
    """Reference from ``from_table`` columns to ``to_table`` columns, pair by pair."""

    from_table: str
    to_table: str
    column_pairs: Tuple[Tuple[str, str], ...]

    def relates(self, table_a: str, table_b: str) -> bool:
        ends = {fold(self.from_table), fold(self.to_table)}
        return ends == {fold(table_a), fold(table_b)}


@dataclass(frozen=True)
class RelationalSchema:
    """Tables in declaration order plus their foreign keys."""

    tables: Tuple[TableDef, ...]
    foreign_keys: Tuple[ForeignKey, ...] = ()
    _by_name: Dict[str, TableDef] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {fold(table.name): table for table in self.tables}
        object.__setattr__(self, "_by_name", index)

    @property
    def table_names(self) -> List[str]:
        return [table.name for table in self.tables]

    def has_table(self, name: str) -> bool:
        return fold(name) in self._by_name

    def table(self, name: str) -> TableDef:
        try:
            return self._by_name[fold(name)]
        except KeyError:
            raise SchemaError(f"unknown table '{name}'") from None

    def canonical(self, name: str) -> str:
        """Stored spelling of a table name."""
        return self.table(name).name

    def order(self, name: str) -> int:
        """Declaration index of a table."""
        target = fold(name)
        for index, table in enumerate(self.tables):
            if fold(table.name) == target:
                return index
        raise SchemaError(f"unknown table '{name}'")

    def is_key_column(self, table: str, column: str) -> bool:
        """True for primary-key columns and columns taking part in a foreign key."""
        if self.table(table).column(column).is_primary_key:
            return True
        for fk in self.foreign_keys:
            for from_col, to_col in fk.column_pairs:
                if fold(fk.from_table) == fold(table) and fold(from_col) == fold(column):
                    return True
                if fold(fk.to_table) == fold(table) and fold(to_col) == fold(column):
                    return True
        return False


@dataclass(frozen=True)
class GraphEdge:
    """One foreign key seen as an undirected edge; ``ordinal`` is its declaration index."""

    table_a: str
    table_b: str
    foreign_key: ForeignKey
    ordinal: int

    @property
    def sort_key(self) -> Tuple[str, str, int]:
        """Folded table names in order, then the ordinal; used to break ties between trees."""
        first, second = sorted((fold(self.table_a), fold(self.table_b)))
        return first, second, self.ordinal

    def other(self, table: str) -> str:
        return self.table_b if fold(table) == fold(self.table_a) else self.table_a


class ReferentialGraph:
    """Undirected multigraph with one node per table and one edge per foreign key."""

    def __init__(self, schema: RelationalSchema):
        self.schema = schema
        self.graph = nx.MultiGraph()
        self.graph.add_nodes_from(schema.table_names)
        self.edges: List[GraphEdge] = []
        for ordinal, fk in enumerate(schema.foreign_keys):
            edge = GraphEdge(schema.canonical(fk.from_table), schema.canonical(fk.to_table), fk, ordinal)
            self.edges.append(edge)
            self.graph.add_edge(edge.table_a, edge.table_b, key=ordinal, edge=edge)

    @property
    def nodes(self) -> List[str]:
        return list(self.graph.nodes)

    def node(self, table: str) -> str:
        """Canonical node name for a table spelled in any case."""
        if not self.schema.has_table(table):
            raise SchemaError(f"unknown table '{table}'")
        return self.schema.canonical(table)

    def components(self) -> List[Set[str]]:
        return [set(component) for component in nx.connected_components(self.graph)]


def _names(raw: Any) -> Tuple[str, ...]:
    """Deduplicate synonyms under normalization, first spelling wins."""
    seen: Set[str] = set()
    kept: List[str] = []
    for value in raw or []:
        key = normalize_term(str(value))
        if key and key not in seen:
            seen.add(key)
            kept.append(str(value))
    return tuple(kept)


def _weight(raw: Any, owner: str) -> float:
    weight = 1.0 if raw is None else float(raw)
    if weight < 0:
        raise SchemaError(f"negative selection weight on '{owner}'")
    return weight


def load_schema(document: Union[Mapping[str, Any], str, Path]) -> RelationalSchema:
    """Build a validated schema from a schema document, JSON text or a file path."""
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        try:
            document = Path(document).read_text(encoding="utf-8")
        except OSError as e:
            raise SchemaError(f"cannot read schema file: {e}") from e
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError(f"malformed schema document: {e}") from e
    if not isinstance(document, Mapping):
        raise SchemaError("malformed schema document: expected an object")

    raw_tables = document.get("tables") or []
    if not raw_tables:
        raise SchemaError("schema has no tables")

    tables: List[TableDef] = []
    seen_tables: Set[str] = set()
    for raw in raw_tables:
        name = str(raw.get("name", "")).strip()
        if not name:
            raise SchemaError("table without a name")
        if fold(name) in seen_tables:
            raise SchemaError(f"duplicate table '{name}'")
        seen_tables.add(fold(name))

        columns: List[ColumnDef] = []
        seen_columns: Set[str] = set()
        for raw_col in raw.get("columns") or []:
            col_name = str(raw_col.get("name", "")).strip()
            if not col_name:
                raise SchemaError(f"column without a name in table '{name}'")
            if fold(col_name) in seen_columns:
                raise SchemaError(f"duplicate column '{col_name}' in table '{name}'")
            seen_columns.add(fold(col_name))
            columns.append(ColumnDef(
                name=col_name,
                data_type=parse_data_type(raw_col.get("type", "string")),
                is_primary_key=bool(raw_col.get("pk", False)),
                is_indexed_for_values=bool(raw_col.get("indexed", False)),
                description=raw_col.get("description"),
                synonyms=_names(raw_col.get("synonyms")),
                selection_weight=_weight(raw_col.get("weight"), f"{name}.{col_name}"),
            ))
        if not columns:
            raise SchemaError(f"table '{name}' has no columns")
        tables.append(TableDef(
            name=name,
            columns=tuple(columns),
            description=raw.get("description"),
            synonyms=_names(raw.get("synonyms")),
            selection_weight=_weight(raw.get("weight"), name),
        ))

    partial = RelationalSchema(tuple(tables))
    foreign_keys: List[ForeignKey] = []
    for raw_fk in document.get("foreign_keys") or []:
        from_table = str(raw_fk.get("from_table", ""))
        to_table = str(raw_fk.get("to_table", ""))
        for ref in (from_table, to_table):
            if not partial.has_table(ref):
                raise SchemaError(f"foreign key references unknown table '{ref}'")
        pairs = tuple((str(p.get("from", "")), str(p.get("to", ""))) for p in raw_fk.get("columns") or [])
        if not pairs:
            raise SchemaError(f"foreign key {from_table}->{to_table} has no column pairs")
        for from_col, to_col in pairs:
            for table_name, col_name in ((from_table, from_col), (to_table, to_col)):
                if not partial.table(table_name).has_column(col_name):
                    raise SchemaError(f"foreign key references unknown column '{table_name}.{col_name}'")
        foreign_keys.append(ForeignKey(partial.canonical(from_table), partial.canonical(to_table), pairs))

    schema = RelationalSchema(tuple(tables), tuple(foreign_keys))
    logger.info("Loaded schema with %d tables and %d foreign keys", len(tables), len(foreign_keys))
    return schema


def schema_to_document(schema: RelationalSchema) -> Dict[str, Any]:
    """Serialize a schema back to the schema document format."""
    tables = []
    for table in schema.tables:
        tables.append({
            "name": table.name,
            "description": table.description,
            "synonyms": list(table.synonyms),
            "weight": table.selection_weight,
            "columns": [
                {
                    "name": col.name,
                    "type": col.data_type.value,
                    "pk": col.is_primary_key,
                    "indexed": col.is_indexed_for_values,
                    "description": col.description,
                    "synonyms": list(col.synonyms),
                    "weight": col.selection_weight,
                }
                for col in table.columns
            ],
        })
    fks = [
        {
            "from_table": fk.from_table,
            "to_table": fk.to_table,
            "columns": [{"from": a, "to": b} for a, b in fk.column_pairs],
        }
        for fk in schema.foreign_keys
    ]
    return {"tables": tables, "foreign_keys": fks}


def build_referential_graph(schema: RelationalSchema) -> ReferentialGraph:
    """Graph of ``schema`` with one edge per foreign key."""
    return ReferentialGraph(schema)


def connected_component(graph: ReferentialGraph, table: str) -> Set[str]:
    """All tables reachable from ``table``."""
    return set(nx.node_connected_component(graph.graph, graph.node(table)))


def render_ddl(schema: RelationalSchema, tables: Iterable[str], columns: Mapping[str, Iterable[str]]) -> str:
    """CREATE TABLE statements restricted to the requested tables and columns."""
    wanted = {fold(schema.canonical(name)) for name in tables}
    requested = {fold(schema.canonical(name)): {fold(c) for c in cols} for name, cols in columns.items()}
    statements = []
    for table in schema.tables:
        key = fold(table.name)
        if key not in wanted:
            continue
        chosen = requested.get(key, set())
        if not chosen:
            raise SchemaError(f"no columns requested for table '{table.name}'")
        for col_name in chosen:
            if not table.has_column(col_name):
                raise SchemaError(f"unknown column '{col_name}' in table '{table.name}'")
        cols = [col for col in table.columns if fold(col.name) in chosen]
        keys = [col for col in cols if col.is_primary_key]
        lines = []
        for col in cols:
            marker = " PRIMARY KEY" if len(keys) == 1 and col.is_primary_key else ""
            lines.append(f"    {quote_identifier(col.name)} {col.data_type.sql_type}{marker}")
        if len(keys) > 1:
            lines.append(f"    PRIMARY KEY ({', '.join(quote_identifier(col.name) for col in keys)})")
        statements.append(f"CREATE TABLE {quote_identifier(table.name)} (\n" + ",\n".join(lines) + "\n);")
    return "\n\n".join(statements)
