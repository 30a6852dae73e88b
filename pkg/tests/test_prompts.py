"""Unit tests for prompt templates and response parsing."""

import pytest

from kwsql.errors import PromptError, ResponseParseError
from kwsql.keywords import MatchSet, match_keywords
from kwsql.prompts import (
    Expected,
    PromptKind,
    PromptLibrary,
    build_prompt,
    parse_structured,
    render_matches,
    render_rows,
    render_sql_examples,
    render_table_examples,
    render_template,
    repair_message,
)
from kwsql.providers import Role
from tests.support import fixture_dictionary


class TestRenderTemplate:
    """Test cases for slot substitution."""

    def test_slots_and_comments(self):
        """Test slots are filled and comments dropped."""
        template = "{{! version: 3 }}\nHello {{ name }}!"
        assert render_template(template, {"name": "rig"}) == "Hello rig!"

    def test_optional_section(self):
        """Test a section renders only when its slot has text."""
        template = "Q{{#hints}} with {{hints}}{{/hints}}."
        assert render_template(template, {"hints": ""}) == "Q."
        assert render_template(template, {"hints": "dates"}) == "Q with dates."

    def test_missing_slot(self):
        """Test an unfilled slot raises PromptError."""
        with pytest.raises(PromptError, match="slot 'name' has no value"):
            render_template("Hello {{name}}", {})


class TestBuildPrompt:
    """Test cases for assembling call-site prompts."""

    def test_keyword_extraction_messages(self):
        """Test a system and a user message are produced with the question inlined."""
        messages = build_prompt(PromptKind.KEYWORD_EXTRACTION, {"question": "Which rigs are open?"})
        assert [m.role for m in messages] == [Role.SYSTEM, Role.USER]
        assert "Question: Which rigs are open?" in messages[1].content
        assert "{{" not in messages[0].content + messages[1].content

    def test_missing_required_slot(self):
        """Test a call site cannot omit a required slot."""
        with pytest.raises(PromptError, match="schema_linking prompt is missing 'schema'"):
            build_prompt(PromptKind.SCHEMA_LINKING, {"question": "q"})

    def test_empty_required_slot(self):
        """Test required text slots must not be blank."""
        with pytest.raises(PromptError, match="empty 'question'"):
            build_prompt(PromptKind.KEYWORD_EXTRACTION, {"question": "  "})

    def test_every_template_renders(self):
        """Test each packaged template accepts its required slots."""
        library = PromptLibrary()
        for kind in PromptKind:
            context = {"question": "q", "schema": "s", "max_sub_questions": 4, "view_name": "V",
                       "view_ddl": "CREATE TABLE V (a TEXT);", "matches": "", "rows": "", "examples": "",
                       "ddl": "CREATE TABLE T (a TEXT);", "samples": "", "hints": "", "sql": "SELECT a FROM T",
                       "documentation": ""}
            messages = build_prompt(kind, context, library)
            assert messages[1].content
            assert library.version(kind) == "1"

    def test_override_directory(self, tmp_path):
        """Test a templates directory overrides only the files it holds."""
        (tmp_path / "keyword_extraction.txt").write_text("Words of: {{question}}", encoding="utf-8")
        library = PromptLibrary(tmp_path)
        messages = build_prompt(PromptKind.KEYWORD_EXTRACTION, {"question": "q"}, library)
        assert messages[1].content == "Words of: q"
        assert library.version(PromptKind.KEYWORD_EXTRACTION) == "0"
        assert "relational database" in messages[0].content


class TestRenderers:
    """Test cases for context renderers."""

    def test_matches(self):
        """Test keyword matches are listed with their target and class."""
        rendered = render_matches(match_keywords(fixture_dictionary(), ["E176"]))
        assert rendered == "- \"E176\" -> value 'E-176' in Installation.name (normalized)"
        assert render_matches(MatchSet()) == "(no keyword matched the database)"

    def test_rows(self):
        """Test rows render as a pipe table with NULLs spelled out."""
        assert render_rows(["a", "b"], [(1, None)]) == "a | b\n1 | NULL"
        assert render_rows(["a"], []) == "(no rows)"

    def test_examples(self):
        """Test example pairs render in both prompt styles."""
        assert render_table_examples([("q1", {"B", "A"})]) == "(q1 → A, B)"
        assert render_sql_examples([("q1", "SELECT 1")]) == "Question: q1\nSQL: SELECT 1"
        assert render_sql_examples([]) == "(no examples)"


class TestParseStructured:
    """Test cases for tolerant response parsing."""

    def test_fenced_sql(self):
        """Test SQL is taken from the fenced block without its semicolon."""
        assert parse_structured("Here it is:\n```sql\nSELECT 1;\n```\nDone.", Expected.FENCED_SQL) == "SELECT 1"

    def test_bare_sql(self):
        """Test an unfenced statement is accepted when it starts the response."""
        assert parse_structured("SELECT a FROM T;", Expected.FENCED_SQL) == "SELECT a FROM T"

    @pytest.mark.parametrize("response", ["I cannot answer that.", "```sql\n```"])
    def test_no_sql(self, response):
        """Test responses without SQL raise ResponseParseError keeping the raw text."""
        with pytest.raises(ResponseParseError) as info:
            parse_structured(response, Expected.FENCED_SQL)
        assert info.value.raw == response

    def test_array_in_prose(self):
        """Test a JSON array is found inside chatter."""
        assert parse_structured('Sure! ["open", "P-X"] hope this helps', Expected.JSON_ARRAY_OF_STRINGS) == [
            "open", "P-X",
        ]

    def test_fenced_array(self):
        """Test a fenced JSON array is preferred."""
        assert parse_structured('```json\n["rig"]\n```', Expected.JSON_ARRAY_OF_STRINGS) == ["rig"]

    def test_numbers_become_strings(self):
        """Test scalar items are kept as text."""
        assert parse_structured("[3, \"notes\"]", Expected.JSON_ARRAY_OF_STRINGS) == ["3", "notes"]

    def test_nested_items_rejected(self):
        """Test non-scalar items are not keywords."""
        with pytest.raises(ResponseParseError, match="non-string"):
            parse_structured('[["a"]]', Expected.JSON_ARRAY_OF_STRINGS)

    def test_truncated_array_recovered(self):
        """Test a response cut off mid-array keeps its items."""
        assert parse_structured('["open", "work ord', Expected.JSON_ARRAY_OF_STRINGS) == ["open", "work ord"]

    def test_no_array(self):
        """Test text with no array is rejected."""
        with pytest.raises(ResponseParseError, match="no JSON array"):
            parse_structured("open, P-X", Expected.JSON_ARRAY_OF_STRINGS)

    def test_object(self):
        """Test a JSON object is extracted from prose."""
        assert parse_structured('Result: {"tables": ["A"]}', Expected.JSON_OBJECT) == {"tables": ["A"]}
        with pytest.raises(ResponseParseError, match="no JSON object"):
            parse_structured('["A"]', Expected.JSON_OBJECT)

    def test_text(self):
        """Test plain text answers are unquoted."""
        assert parse_structured('"Which rigs are open?"', Expected.TEXT) == "Which rigs are open?"
        with pytest.raises(ResponseParseError):
            parse_structured("  ", Expected.TEXT)


class TestRepairMessage:
    """Test cases for the repair instruction."""

    def test_repair_names_problem_and_format(self):
        """Test the repair turn repeats the problem and the expected shape."""
        message = repair_message(Expected.FENCED_SQL, "no SQL block in response")
        assert message.role is Role.USER
        assert "could not be used (no SQL block in response)" in message.content
        assert "```sql" in message.content
