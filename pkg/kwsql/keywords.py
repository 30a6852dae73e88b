"""Keyword dictionary over schema names, synonyms and indexed values, and keyword matching."""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .errors import DictionaryError
from .schema import RelationalSchema, ReferentialGraph, fold, normalize_term
from .sqltext import quote_identifier
from .views import DEFAULT_STRIP_PREFIXES, ViewDefinition, inline_view, synthesize_view

logger = logging.getLogger(__name__)

SCORE_FLOOR = 0.5
MIN_PREFIX_LENGTH = 3


def normalize(term: str) -> str:
    return normalize_term(term)


class EntryKind(str, Enum):
    """What a dictionary entry points at."""

    TABLE = "table"
    COLUMN = "column"
    VALUE = "value"


class MatchClass(str, Enum):
    """How a keyword met an entry, strongest first."""

    EXACT_VALUE = "exact_value"
    EXACT_NAME = "exact_name"
    SYNONYM = "synonym"
    NORMALIZED = "normalized"
    PREFIX_PARTIAL = "prefix_partial"


CLASS_SCORES = {
    MatchClass.EXACT_VALUE: 1.0,
    MatchClass.EXACT_NAME: 0.95,
    MatchClass.SYNONYM: 0.9,
    MatchClass.NORMALIZED: 0.8,
}

_KIND_RANK = {EntryKind.VALUE: 0, EntryKind.COLUMN: 1, EntryKind.TABLE: 2}


def prefix_score(overlap_ratio: float) -> float:
    """Partial-prefix score; stays strictly between the floor and the normalized class."""
    return SCORE_FLOOR + 0.25 * overlap_ratio


@dataclass(frozen=True)
class DictionaryEntry:
    """One table, column or indexed value with the normalized forms that find it."""

    kind: EntryKind
    forms: Tuple[str, ...]
    table: str
    column: Optional[str] = None
    value: Optional[str] = None

    @property
    def target(self) -> str:
        """The name or value this entry denotes."""
        if self.kind is EntryKind.VALUE:
            return self.value or ""
        if self.kind is EntryKind.COLUMN:
            return self.column or ""
        return self.table

    @property
    def target_key(self) -> Tuple[str, str, str]:
        return fold(self.table), fold(self.column or ""), self.value or ""

    def describe(self) -> str:
        if self.kind is EntryKind.VALUE:
            return f"value '{self.value}' in {self.table}.{self.column}"
        if self.kind is EntryKind.COLUMN:
            return f"column {self.table}.{self.column}"
        return f"table {self.table}"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value, "forms": list(self.forms), "table": self.table}
        if self.column is not None:
            data["column"] = self.column
        if self.value is not None:
            data["value"] = self.value
        return data


@dataclass
class KeywordDictionary:
    """Entries plus an index from normalized form to entry positions."""

    entries: List[DictionaryEntry]
    index: Dict[str, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            for position, entry in enumerate(self.entries):
                for form in entry.forms:
                    self.index.setdefault(form, []).append(position)

    def lookup(self, form: str) -> List[DictionaryEntry]:
        """Entries indexed under ``form``, in build order."""
        return [self.entries[i] for i in self.index.get(form, [])]

    def count(self, kind: EntryKind) -> int:
        return sum(1 for entry in self.entries if entry.kind is kind)


@dataclass(frozen=True)
class KeywordMatch:
    keyword: str
    entry: DictionaryEntry
    score: float
    match_class: MatchClass

    def to_dict(self) -> Dict[str, Any]:
        return {
            "keyword": self.keyword,
            "class": self.match_class.value,
            "score": round(self.score, 4),
            **self.entry.to_dict(),
        }


@dataclass
class MatchSet:
    """Matches above the score floor and the keywords that found nothing."""

    matches: List[KeywordMatch] = field(default_factory=list)
    unmatched: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"matches": [m.to_dict() for m in self.matches], "unmatched": list(self.unmatched)}


def _forms(*names: str) -> Tuple[str, ...]:
    forms: List[str] = []
    for name in names:
        form = normalize(name)
        if form and form not in forms:
            forms.append(form)
    return tuple(forms)


def build_dictionary(schema: RelationalSchema, value_source: Iterable[Any] = ()) -> KeywordDictionary:
    """Table, column and distinct indexed-value entries for a schema.

    ``value_source`` yields (table, column, value) triples or mappings with those keys.
    """
    entries: List[DictionaryEntry] = []
    for table in schema.tables:
        entries.append(DictionaryEntry(EntryKind.TABLE, _forms(table.name, *table.synonyms), table.name))
    for table in schema.tables:
        for col in table.columns:
            entries.append(DictionaryEntry(
                EntryKind.COLUMN, _forms(col.name, *col.synonyms), table.name, column=col.name
            ))

    seen: Set[Tuple[str, str, str]] = set()
    skipped = 0
    for item in value_source:
        if isinstance(item, Mapping):
            table_name, column_name, raw = item.get("table"), item.get("column"), item.get("value")
        else:
            table_name, column_name, raw = item
        if not schema.has_table(str(table_name)):
            raise DictionaryError(f"value for unknown table '{table_name}'")
        table = schema.table(str(table_name))
        if not table.has_column(str(column_name)):
            raise DictionaryError(f"value for unknown column '{table_name}.{column_name}'")
        col = table.column(str(column_name))
        if not col.is_indexed_for_values:
            raise DictionaryError(f"column '{table.name}.{col.name}' is not indexed for values")
        if raw is None:
            continue
        value = str(raw)
        key = (fold(table.name), fold(col.name), value)
        if key in seen:
            continue
        seen.add(key)
        forms = _forms(value)
        if not forms:
            skipped += 1
            continue
        entries.append(DictionaryEntry(EntryKind.VALUE, forms, table.name, column=col.name, value=value))
    if skipped:
        logger.warning("Skipped %d values with no alphanumeric content", skipped)

    dictionary = KeywordDictionary(entries)
    logger.info("Built dictionary with %d entries (%d values)", len(entries), dictionary.count(EntryKind.VALUE))
    return dictionary


def _classify(keyword: str, entry: DictionaryEntry) -> Optional[Tuple[MatchClass, float]]:
    norm = normalize(keyword)
    if not norm:
        return None
    if keyword.strip().casefold() == entry.target.casefold():
        match_class = MatchClass.EXACT_VALUE if entry.kind is EntryKind.VALUE else MatchClass.EXACT_NAME
        return match_class, CLASS_SCORES[match_class]
    if norm in entry.forms:
        match_class = MatchClass.NORMALIZED if norm == normalize(entry.target) else MatchClass.SYNONYM
        return match_class, CLASS_SCORES[match_class]
    ratio = 0.0
    for form in entry.forms:
        short, long = sorted((norm, form), key=len)
        if len(short) >= MIN_PREFIX_LENGTH and long.startswith(short):
            ratio = max(ratio, len(short) / len(long))
    if ratio:
        return MatchClass.PREFIX_PARTIAL, prefix_score(ratio)
    return None


def _candidates(dictionary: KeywordDictionary, keyword: str) -> List[KeywordMatch]:
    norm = normalize(keyword)
    if not norm:
        return []
    positions: Set[int] = set(dictionary.index.get(norm, []))
    if len(norm) >= MIN_PREFIX_LENGTH:
        for form, where in dictionary.index.items():
            if form.startswith(norm) or (len(form) >= MIN_PREFIX_LENGTH and norm.startswith(form)):
                positions.update(where)
    found = []
    for position in positions:
        entry = dictionary.entries[position]
        classified = _classify(keyword, entry)
        if classified is not None and classified[1] >= SCORE_FLOOR:
            found.append(KeywordMatch(keyword, entry, classified[1], classified[0]))
    return found


def _best(candidates: List[KeywordMatch]) -> Optional[KeywordMatch]:
    if not candidates:
        return None
    return min(candidates, key=lambda m: (-m.score, _KIND_RANK[m.entry.kind], m.entry.target_key))


def match_keywords(dictionary: KeywordDictionary, keywords: Sequence[str]) -> MatchSet:
    """Best dictionary entry per keyword; multi-word keywords fall back to their tokens."""
    result = MatchSet()
    for keyword in keywords:
        best = _best(_candidates(dictionary, keyword))
        if best is None and len(keyword.split()) > 1:
            token_matches = []
            for token in keyword.split():
                token_best = _best(_candidates(dictionary, token))
                if token_best is not None:
                    token_matches.append(KeywordMatch(keyword, token_best.entry, token_best.score,
                                                      token_best.match_class))
            best = _best(token_matches)
        if best is None:
            result.unmatched.append(keyword)
        else:
            result.matches.append(best)
    return result


def tables_of(matches: MatchSet) -> Set[str]:
    """Tables owning at least one matched entry."""
    return {match.entry.table for match in matches.matches}


def save_dictionary(dictionary: KeywordDictionary, path: Union[str, Path]) -> None:
    """Write the entries as JSON; the index is rebuilt on load."""
    payload = {"entries": [entry.to_dict() for entry in dictionary.entries]}
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_dictionary(path: Union[str, Path]) -> KeywordDictionary:
    """Read a dictionary written by ``save_dictionary``."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DictionaryError(f"cannot load dictionary {path}: {e}") from e
    entries = []
    for raw in payload.get("entries", []):
        try:
            kind = EntryKind(raw["kind"])
            forms = tuple(raw["forms"])
            table = raw["table"]
        except (KeyError, ValueError) as e:
            raise DictionaryError(f"malformed dictionary entry {raw!r}") from e
        if not forms:
            raise DictionaryError(f"dictionary entry without forms: {raw!r}")
        entries.append(DictionaryEntry(kind, forms, table, raw.get("column"), raw.get("value")))
    return KeywordDictionary(entries)


@dataclass(frozen=True)
class KeywordQuery:
    """A keyword query over its view and the same query with the view inlined."""

    view: ViewDefinition
    sql: str
    base_sql: str


def _literal(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def compile_keyword_query(
    schema: RelationalSchema,
    matches: MatchSet,
    graph: Optional[ReferentialGraph] = None,
    strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES,
) -> KeywordQuery:
    """Keyword query over the view joining every matched table.

    Value matches on one column are OR-ed; restrictions on different columns are AND-ed.
    """
    tables = tables_of(matches)
    if not tables:
        raise DictionaryError("no keyword matched the dictionary")
    view = synthesize_view(schema, tables, graph=graph, strip_prefixes=strip_prefixes)
    columns = view.column_map()

    restrictions: Dict[str, List[str]] = {}
    for match in matches.matches:
        entry = match.entry
        if entry.kind is not EntryKind.VALUE:
            continue
        output = quote_identifier(columns[(fold(entry.table), fold(entry.column or ""))])
        literal = _literal(entry.value or "")
        if literal not in restrictions.setdefault(output, []):
            restrictions[output].append(literal)

    sql = f"SELECT * FROM {quote_identifier(view.name)}"
    if restrictions:
        clauses = []
        for output, literals in restrictions.items():
            if len(literals) == 1:
                clauses.append(f"{output} = {literals[0]}")
            else:
                clauses.append(f"{output} IN ({', '.join(literals)})")
        sql += " WHERE " + " AND ".join(clauses)
    return KeywordQuery(view, sql, inline_view(sql, view))
