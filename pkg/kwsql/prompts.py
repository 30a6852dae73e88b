"""Prompt templates, context renderers and tolerant response parsing."""

import json
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import jiter

from .errors import PromptError, ResponseParseError
from .keywords import MatchSet
from .providers import ChatMessage, Role
from .schema import RelationalSchema

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"


class PromptKind(str, Enum):
    """LLM call sites; each has its own template file."""

    KEYWORD_EXTRACTION = "keyword_extraction"
    SCHEMA_LINKING = "schema_linking"
    QUESTION_DECOMPOSITION = "question_decomposition"
    SQL_COMPILATION = "sql_compilation"
    SYNTH_CREATE_QUESTION = "synth_create_question"
    SYNTH_GENERATE_SQL = "synth_generate_sql"
    SYNTH_IMPROVE_QUESTION = "synth_improve_question"


class Expected(str, Enum):
    """Shape of the payload a call site parses out of the response."""

    JSON_ARRAY_OF_STRINGS = "json_array_of_strings"
    FENCED_SQL = "fenced_sql"
    JSON_OBJECT = "json_object"
    TEXT = "text"


# Slots each kind must receive; optional slots may still appear in a template.
REQUIRED_SLOTS: Dict[PromptKind, Tuple[str, ...]] = {
    PromptKind.KEYWORD_EXTRACTION: ("question",),
    PromptKind.SCHEMA_LINKING: ("question", "schema"),
    PromptKind.QUESTION_DECOMPOSITION: ("question", "max_sub_questions"),
    PromptKind.SQL_COMPILATION: ("question", "view_name", "view_ddl", "matches", "rows", "examples"),
    PromptKind.SYNTH_CREATE_QUESTION: ("ddl", "samples", "hints"),
    PromptKind.SYNTH_GENERATE_SQL: ("question", "ddl"),
    PromptKind.SYNTH_IMPROVE_QUESTION: ("question", "sql", "documentation"),
}
NON_EMPTY_SLOTS = {"question", "schema", "view_name", "view_ddl", "ddl"}

_COMMENT = re.compile(r"\{\{!.*?\}\}\n?", re.S)
_SECTION = re.compile(r"\{\{#(\w+)\}\}(.*?)\{\{/\1\}\}\n?", re.S)
_SLOT = re.compile(r"\{\{\s*(\w+)\s*\}\}")
_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n?(.*?)```", re.S)
_VERSION = re.compile(r"\{\{!\s*version:\s*(\S+)\s*\}\}")


def render_template(template: str, values: Mapping[str, str]) -> str:
    """Substitute ``{{name}}`` slots; ``{{#name}}...{{/name}}`` renders only when the slot is non-empty."""
    text = _COMMENT.sub("", template)
    text = _SECTION.sub(lambda m: m.group(2) if values.get(m.group(1)) else "", text)

    def slot(match: "re.Match[str]") -> str:
        name = match.group(1)
        if name not in values:
            raise PromptError(f"template slot '{name}' has no value")
        return values[name]

    return _SLOT.sub(slot, text)


class PromptLibrary:
    """Templates from a directory, falling back to the packaged set per file."""

    def __init__(self, templates_dir: Optional[Union[str, Path]] = None):
        self.templates_dir = Path(templates_dir) if templates_dir else None
        self._cache: Dict[str, str] = {}

    def _read(self, name: str) -> str:
        if name not in self._cache:
            candidates = [TEMPLATES_DIR / f"{name}.txt"]
            if self.templates_dir is not None:
                candidates.insert(0, self.templates_dir / f"{name}.txt")
            for path in candidates:
                if path.exists():
                    self._cache[name] = path.read_text(encoding="utf-8")
                    break
            else:
                raise PromptError(f"no template named '{name}'")
        return self._cache[name]

    def template(self, kind: PromptKind) -> str:
        return self._read(kind.value)

    def system(self) -> str:
        return self._read("system")

    def version(self, kind: PromptKind) -> str:
        """Version tag from the template header, "0" when absent."""
        found = _VERSION.search(self.template(kind))
        return found.group(1) if found else "0"


_default_library = PromptLibrary()


def _as_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return "\n".join(_as_text(v) for v in value)
    return str(value)


def build_prompt(
    kind: PromptKind, context: Mapping[str, Any], library: Optional[PromptLibrary] = None
) -> List[ChatMessage]:
    """System and user messages for one LLM call site."""
    library = library or _default_library
    values = {name: _as_text(value) for name, value in context.items()}
    for name in REQUIRED_SLOTS[kind]:
        if name not in values:
            raise PromptError(f"{kind.value} prompt is missing '{name}'")
        if name in NON_EMPTY_SLOTS and not values[name].strip():
            raise PromptError(f"{kind.value} prompt has an empty '{name}'")
    system = render_template(library.system(), values).strip()
    user = render_template(library.template(kind), values).strip()
    return [ChatMessage(Role.SYSTEM, system), ChatMessage(Role.USER, user)]


def render_schema_listing(schema: RelationalSchema) -> str:
    """One line per table: name, columns and description."""
    lines = []
    for table in schema.tables:
        columns = ", ".join(col.name for col in table.columns)
        line = f"- {table.name}({columns})"
        if table.description:
            line += f": {table.description}"
        lines.append(line)
    return "\n".join(lines)


def render_matches(matches: MatchSet) -> str:
    """Matched keywords with what they point at and their match class."""
    if not matches.matches:
        return "(no keyword matched the database)"
    return "\n".join(
        f"- \"{m.keyword}\" -> {m.entry.describe()} ({m.match_class.value})" for m in matches.matches
    )


def render_table_examples(pairs: Iterable[Tuple[str, Iterable[str]]]) -> str:
    return "\n".join(f"({question} → {', '.join(sorted(tables))})" for question, tables in pairs)


def render_sql_examples(pairs: Iterable[Tuple[str, str]]) -> str:
    blocks = [f"Question: {question}\nSQL: {sql}" for question, sql in pairs]
    return "\n\n".join(blocks) if blocks else "(no examples)"


def render_rows(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Pipe-separated header and rows; NULL for missing values."""
    if not rows:
        return "(no rows)"
    lines = [" | ".join(columns)]
    lines.extend(" | ".join("NULL" if v is None else str(v) for v in row) for row in rows)
    return "\n".join(lines)


def _strings(value: Any, raw: str) -> List[str]:
    if not isinstance(value, list):
        raise ResponseParseError("expected a JSON array", raw)
    items = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (str, int, float)):
            raise ResponseParseError("JSON array holds a non-string item", raw)
        items.append(str(item))
    return items


def _json_payload(response: str, opener: str) -> Any:
    fenced = _FENCE.search(response)
    texts = [fenced.group(2), response] if fenced else [response]
    decoder = json.JSONDecoder()
    for text in texts:
        start = text.find(opener)
        while start != -1:
            try:
                return decoder.raw_decode(text, start)[0]
            except json.JSONDecodeError:
                try:
                    # truncated responses: keep whatever complete items jiter recovers
                    recovered = jiter.from_json(text[start:].encode("utf-8"), partial_mode="trailing-strings")
                except ValueError:
                    recovered = None
                if recovered:
                    return recovered
            start = text.find(opener, start + 1)
    return None


def parse_structured(response: str, expected: Expected) -> Any:
    """Extract the payload of the expected shape from a chatty response."""
    if expected is Expected.FENCED_SQL:
        fenced = _FENCE.search(response)
        if fenced:
            sql = fenced.group(2)
        elif re.match(r"\s*(SELECT|WITH)\b", response, re.I):
            sql = response
        else:
            raise ResponseParseError("no SQL block in response", response)
        sql = sql.strip().rstrip(";").strip()
        if not sql:
            raise ResponseParseError("empty SQL block", response)
        return sql

    if expected is Expected.TEXT:
        fenced = _FENCE.search(response)
        text = (fenced.group(2) if fenced else response).strip().strip('"').strip()
        if not text:
            raise ResponseParseError("empty response", response)
        return text

    if expected is Expected.JSON_ARRAY_OF_STRINGS:
        value = _json_payload(response, "[")
        if value is None:
            raise ResponseParseError("no JSON array in response", response)
        return _strings(value, response)

    value = _json_payload(response, "{")
    if not isinstance(value, dict):
        raise ResponseParseError("no JSON object in response", response)
    return value


REPAIR_INSTRUCTIONS = {
    Expected.JSON_ARRAY_OF_STRINGS: "Return only a JSON array of strings.",
    Expected.FENCED_SQL: "Return only one SQL SELECT statement inside a ```sql fenced block.",
    Expected.JSON_OBJECT: "Return only a JSON object.",
    Expected.TEXT: "Return only the requested text.",
}


def repair_message(expected: Expected, problem: str) -> ChatMessage:
    """Follow-up user turn asking the model to fix an unusable answer."""
    return ChatMessage(
        Role.USER,
        f"Your previous answer could not be used ({problem}). {REPAIR_INSTRUCTIONS[expected]}",
    )
