"""Shallow SQL analyzer: sqlglot tokens plus a clause tracker for single SELECT statements.

The analyzer understands SELECT with optional WHERE, GROUP BY, HAVING, ORDER BY,
LIMIT/FETCH, INNER JOIN ... ON, comma joins, derived tables and subqueries in any
clause. It records table references with their source spans so callers can splice
rewritten text back into the original statement.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from sqlglot.errors import TokenError
from sqlglot.tokens import Tokenizer

from .errors import SQLAnalysisError

logger = logging.getLogger(__name__)

CLAUSES = {"SELECT", "FROM", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT", "OFFSET", "FETCH"}
SET_OPERATORS = {"UNION", "INTERSECT", "EXCEPT", "MINUS"}
JOIN_WORDS = {"JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL"}
AGGREGATES = {"COUNT", "SUM", "AVG", "MIN", "MAX"}
LIMIT_CLAUSES = {"LIMIT", "FETCH"}

# Words that never name a column in an unqualified reference.
_RESERVED = {
    "SELECT", "DISTINCT", "ALL", "AS", "AND", "OR", "NOT", "IN", "IS", "NULL", "LIKE",
    "BETWEEN", "CASE", "WHEN", "THEN", "ELSE", "END", "ASC", "DESC", "TRUE", "FALSE",
    "EXISTS", "ANY", "ON", "WHERE", "HAVING", "GROUP BY", "ORDER BY", "NULLS", "FIRST", "LAST",
}

# Words that must be quoted to be read as a table or column name.
SQL_KEYWORDS = frozenset("""
ABORT ACTION ADD AFTER ALL ALTER ALWAYS ANALYZE AND ANY AS ASC ATTACH AUTOINCREMENT BEFORE BEGIN
BETWEEN BY CASCADE CASE CAST CHECK COLLATE COLUMN COMMIT CONFLICT CONSTRAINT CREATE CROSS CURRENT
CURRENT_DATE CURRENT_TIME CURRENT_TIMESTAMP DATABASE DEFAULT DEFERRABLE DEFERRED DELETE DESC DETACH
DISTINCT DO DROP EACH ELSE END ESCAPE EXCEPT EXCLUDE EXCLUSIVE EXISTS EXPLAIN FAIL FALSE FETCH FILTER
FIRST FOLLOWING FOR FOREIGN FROM FULL GENERATED GLOB GROUP GROUPS HAVING IF IGNORE IMMEDIATE IN INDEX
INDEXED INITIALLY INNER INSERT INSTEAD INTERSECT INTO IS ISNULL JOIN KEY LAST LEFT LIKE LIMIT MATCH
MATERIALIZED MINUS NATURAL NO NOT NOTHING NOTNULL NULL NULLS OF OFFSET ON OR ORDER OTHERS OUTER OVER
PARTITION PLAN PRAGMA PRECEDING PRIMARY QUERY RAISE RANGE RECURSIVE REFERENCES REGEXP REINDEX RELEASE
RENAME REPLACE RESTRICT RETURNING RIGHT ROLLBACK ROW ROWS SAVEPOINT SELECT SET SOME TABLE TEMP
TEMPORARY THEN TIES TO TRANSACTION TRIGGER TRUE UNBOUNDED UNION UNIQUE UPDATE USER USING VACUUM VALUES
VIEW VIRTUAL WHEN WHERE WINDOW WITH WITHOUT
""".split())

_PLAIN_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_WORD = re.compile(r"\w+(?:\s+\w+)*\Z")
_STRING_TYPES = {"STRING", "NATIONAL_STRING", "RAW_STRING", "BIT_STRING", "HEX_STRING", "BYTE_STRING"}
_PUNCTUATION = {"L_PAREN": "lparen", "R_PAREN": "rparen", "COMMA": "comma", "DOT": "dot", "STAR": "star"}

Edit = Tuple[int, int, str]


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str
    value: str
    upper: str
    start: int
    end: int


def tokenize(sql: str) -> List[Tok]:
    """Tokens with source offsets; quoted identifiers keep their inner text as ``value``."""
    try:
        raw_tokens = Tokenizer().tokenize(sql)
    except TokenError as e:
        raise SQLAnalysisError(f"cannot tokenize statement: {e}") from e

    tokens: List[Tok] = []
    for token in raw_tokens:
        start, end = token.start, token.end + 1
        text = sql[start:end]
        type_name = token.token_type.name
        if type_name == "SEMICOLON":
            raise SQLAnalysisError("multiple statements are not supported")
        if type_name in _STRING_TYPES:
            kind = "string"
        elif type_name == "NUMBER":
            kind = "number"
        elif type_name in _PUNCTUATION:
            kind = _PUNCTUATION[type_name]
        elif type_name == "IDENTIFIER" or _WORD.match(text):
            kind = "word"
        else:
            kind = "op"
        value = token.text if type_name == "IDENTIFIER" else text
        tokens.append(Tok(kind, text, value, " ".join(text.upper().split()), start, end))

    merged: List[Tok] = []
    for tok in tokens:
        if merged and tok.upper == "BY" and merged[-1].upper in ("GROUP", "ORDER"):
            prev = merged.pop()
            upper = f"{prev.upper} BY"
            merged.append(Tok("word", upper, upper, upper, prev.start, tok.end))
        else:
            merged.append(tok)
    return merged


def is_join_word(tok: Tok) -> bool:
    return tok.kind == "word" and any(word in JOIN_WORDS for word in tok.upper.split())


@dataclass
class TableRef:
    """A table named in a FROM item; the span covers the name and its alias."""

    name: str
    alias: Optional[str]
    start: int
    end: int


@dataclass(frozen=True)
class ColumnRef:
    qualifier: Optional[str]
    column: str
    start: int
    end: int


@dataclass
class Scope:
    """One SELECT at a given nesting depth and the tokens that belong to it."""

    depth: int
    start: int
    end: int = 0
    own: List[int] = field(default_factory=list)
    clause_of: Dict[int, Optional[str]] = field(default_factory=dict)
    tables: List[TableRef] = field(default_factory=list)
    derived_tables: int = 0
    joins: int = 0
    select_items: int = 0
    from_span: Optional[Tuple[int, int]] = None

    def has_clause(self, name: str) -> bool:
        return name in self.clause_of.values()


@dataclass(frozen=True)
class ConstructCounts:
    group_by: int
    order_by: int
    limits: int
    set_operators: int
    subqueries: int
    aggregates: int
    select_items: int


class SelectAnalysis:
    """Token stream and scope tree of one SELECT statement."""

    def __init__(self, sql: str):
        self.sql = sql.strip().rstrip(";").rstrip()
        if not self.sql:
            raise SQLAnalysisError("empty statement")
        self.tokens = tokenize(self.sql)
        if not self.tokens:
            raise SQLAnalysisError("empty statement")
        self.scopes: List[Scope] = []
        self.set_operators = 0
        self._match = self._match_parens()
        self._scan_query(0, len(self.tokens), 0)

    def _match_parens(self) -> Dict[int, int]:
        pairs: Dict[int, int] = {}
        stack: List[int] = []
        for index, tok in enumerate(self.tokens):
            if tok.kind == "lparen":
                stack.append(index)
            elif tok.kind == "rparen":
                if not stack:
                    raise SQLAnalysisError("unbalanced parentheses")
                pairs[stack.pop()] = index
        if stack:
            raise SQLAnalysisError("unbalanced parentheses")
        return pairs

    def _scan_query(self, lo: int, hi: int, depth: int) -> None:
        i = lo
        while i < hi:
            tok = self.tokens[i]
            if tok.kind == "lparen":
                close = self._match[i]
                self._scan_query(i + 1, close, depth)
                i = close + 1
            elif tok.upper == "SELECT":
                i = self._scan_select(i, hi, depth)
            else:
                raise SQLAnalysisError(f"expected SELECT near '{tok.text}'")
            if i < hi:
                if self.tokens[i].upper not in SET_OPERATORS:
                    raise SQLAnalysisError(f"unexpected '{self.tokens[i].text}'")
                self.set_operators += 1
                i += 1
                while i < hi and self.tokens[i].upper in ("ALL", "DISTINCT"):
                    i += 1
                if i >= hi:
                    raise SQLAnalysisError("set operator without a right operand")

    def _scan_select(self, i: int, hi: int, depth: int) -> int:
        scope = Scope(depth=depth, start=i)
        self.scopes.append(scope)
        clause: Optional[str] = None
        level = 0
        commas = 0
        entries: List[Tuple[str, int, int]] = []
        k = i
        while k < hi:
            tok = self.tokens[k]
            if tok.kind == "lparen":
                close = self._match[k]
                if close > k + 1 and self.tokens[k + 1].upper == "SELECT":
                    self._scan_query(k + 1, close, depth + 1)
                    if clause == "FROM":
                        entries.append(("sub", k, close))
                    k = close + 1
                    continue
                level += 1
            elif tok.kind == "rparen":
                level -= 1
            elif level == 0 and tok.kind == "word":
                if tok.upper in SET_OPERATORS:
                    break
                if tok.upper in CLAUSES:
                    clause = tok.upper
                    scope.own.append(k)
                    scope.clause_of[k] = clause
                    k += 1
                    continue
            scope.own.append(k)
            scope.clause_of[k] = clause
            if clause == "FROM":
                entries.append(("tok", k, k))
            elif clause == "SELECT" and level == 0 and tok.kind == "comma":
                commas += 1
            k += 1
        scope.end = k
        scope.select_items = commas + 1
        if scope.has_clause("FROM") and not entries:
            raise SQLAnalysisError("FROM clause ends without a table")
        self._parse_from(scope, entries)
        return k

    def _entry_span(self, entry: Tuple[str, int, int]) -> Tuple[int, int]:
        return self.tokens[entry[1]].start, self.tokens[entry[2]].end

    def _alias(self, entries: List[Tuple[str, int, int]], j: int, end: int) -> Tuple[Optional[str], int, int]:
        if j < len(entries) and entries[j][0] == "tok":
            tok = self.tokens[entries[j][1]]
            if tok.upper == "AS" and j + 1 < len(entries) and entries[j + 1][0] == "tok":
                alias_tok = self.tokens[entries[j + 1][1]]
                return alias_tok.value, j + 2, alias_tok.end
            if tok.kind == "word" and not is_join_word(tok) and tok.upper not in ("ON", "USING", "AS"):
                return tok.value, j + 1, tok.end
        return None, j, end

    def _parse_from(self, scope: Scope, entries: List[Tuple[str, int, int]]) -> None:
        if not entries:
            return
        first_start: Optional[int] = None
        last_end = 0
        expect_factor = True
        j = 0
        while j < len(entries):
            entry = entries[j]
            if expect_factor:
                start, end = self._entry_span(entry)
                j += 1
                if entry[0] == "sub":
                    scope.derived_tables += 1
                    _, j, end = self._alias(entries, j, end)
                else:
                    tok = self.tokens[entry[1]]
                    if tok.kind != "word":
                        raise SQLAnalysisError(f"expected a table name, found '{tok.text}'")
                    name = tok.value
                    while (j + 1 < len(entries) and entries[j][0] == "tok" and entries[j + 1][0] == "tok"
                           and self.tokens[entries[j][1]].kind == "dot"
                           and self.tokens[entries[j + 1][1]].kind == "word"):
                        name_tok = self.tokens[entries[j + 1][1]]
                        name, end = name_tok.value, name_tok.end
                        j += 2
                    alias, j, end = self._alias(entries, j, end)
                    scope.tables.append(TableRef(name, alias, start, end))
                if first_start is None:
                    first_start = start
                last_end = end
                expect_factor = False
                continue
            if entry[0] == "tok":
                tok = self.tokens[entry[1]]
                if tok.kind == "comma":
                    expect_factor = True
                    scope.joins += 1
                    j += 1
                    continue
                if is_join_word(tok):
                    while j < len(entries) and entries[j][0] == "tok" and is_join_word(self.tokens[entries[j][1]]):
                        j += 1
                    scope.joins += 1
                    expect_factor = True
                    continue
            last_end = self._entry_span(entry)[1]
            j += 1
        if expect_factor:
            raise SQLAnalysisError("FROM clause ends without a table")
        scope.from_span = (first_start if first_start is not None else 0, last_end)

    @property
    def top(self) -> Scope:
        return self.scopes[0]

    def table_refs(self) -> List[TableRef]:
        """Table references of every scope, outermost first."""
        return [ref for scope in self.scopes for ref in scope.tables]

    def column_refs(self, scope: Scope) -> List[ColumnRef]:
        """Column references owned by a scope outside its FROM and limiting clauses."""
        refs: List[ColumnRef] = []
        skip: set = set()
        for k in scope.own:
            if k in skip or scope.clause_of.get(k) in (None, "FROM", "LIMIT", "OFFSET", "FETCH"):
                continue
            tok = self.tokens[k]
            if tok.kind != "word" or tok.upper in CLAUSES:
                continue
            nxt = self.tokens[k + 1] if k + 1 < len(self.tokens) else None
            prev = self.tokens[k - 1] if k > 0 else None
            if nxt is not None and nxt.kind == "dot":
                target = self.tokens[k + 2] if k + 2 < len(self.tokens) else None
                if target is not None and target.kind == "word":
                    refs.append(ColumnRef(tok.value, target.value, tok.start, target.end))
                    skip.update((k + 1, k + 2))
                continue
            if prev is not None and (prev.kind == "dot" or prev.upper == "AS"):
                continue
            if nxt is not None and nxt.kind == "lparen":
                continue
            if tok.kind == "word" and tok.upper in _RESERVED:
                continue
            refs.append(ColumnRef(None, tok.value, tok.start, tok.end))
        return refs

    def construct_counts(self) -> ConstructCounts:
        group_by = order_by = limits = aggregates = 0
        for scope in self.scopes:
            for k in scope.own:
                tok = self.tokens[k]
                if tok.kind != "word":
                    continue
                if tok.upper == "GROUP BY":
                    group_by += 1
                elif tok.upper == "ORDER BY":
                    order_by += 1
                elif tok.upper in LIMIT_CLAUSES:
                    limits += 1
                elif (tok.upper in AGGREGATES and k + 1 < len(self.tokens)
                      and self.tokens[k + 1].kind == "lparen"):
                    aggregates += 1
        return ConstructCounts(
            group_by=group_by,
            order_by=order_by,
            limits=limits,
            set_operators=self.set_operators,
            subqueries=sum(1 for scope in self.scopes if scope.depth > 0),
            aggregates=aggregates,
            select_items=self.top.select_items,
        )


@lru_cache(maxsize=4096)
def analyze(sql: str) -> SelectAnalysis:
    """Parse a statement; results are cached and must be treated as read-only."""
    return SelectAnalysis(sql)


def from_tables(sql: str) -> FrozenSet[str]:
    """Tables named in FROM and JOIN clauses at any depth, aliases excluded."""
    return frozenset(ref.name for ref in analyze(sql).table_refs())


def has_order_by(sql: str) -> bool:
    """True when the outermost SELECT is ordered."""
    return analyze(sql).top.has_clause("ORDER BY")


def is_parseable(sql: str) -> bool:
    try:
        analyze(sql)
    except SQLAnalysisError:
        return False
    return True


def apply_edits(sql: str, edits: Iterable[Edit]) -> str:
    """Splice replacements into ``sql``; spans must not overlap."""
    ordered = sorted(edits, key=lambda edit: edit[0], reverse=True)
    result = sql
    boundary = len(sql) + 1
    for start, end, replacement in ordered:
        if end > boundary:
            raise SQLAnalysisError("overlapping rewrite spans")
        result = result[:start] + replacement + result[end:]
        boundary = start
    return result


def quote_identifier(name: str) -> str:
    """Return ``name`` ready to splice into SQL, double-quoted only when it needs to be."""
    if _PLAIN_IDENTIFIER.match(name) and name.upper() not in SQL_KEYWORDS:
        return name
    return '"' + name.replace('"', '""') + '"'
