"""Unit tests for the relational schema model."""

import json

import pytest

from kwsql.errors import SchemaError
from kwsql.schema import (
    DataType,
    build_referential_graph,
    connected_component,
    load_schema,
    normalize_term,
    parse_data_type,
    render_ddl,
    schema_to_document,
)
from tests.support import SCHEMA_PATH, fixture_schema, order_schema


def minimal_document(**changes):
    document = {
        "tables": [
            {"name": "A", "columns": [{"name": "id", "type": "integer", "pk": True}]},
            {"name": "B", "columns": [{"name": "id", "type": "integer", "pk": True},
                                      {"name": "a_id", "type": "integer"}]},
        ],
        "foreign_keys": [{"from_table": "B", "to_table": "A", "columns": [{"from": "a_id", "to": "id"}]}],
    }
    document.update(changes)
    return document


class TestLoadSchema:
    """Test cases for schema ingestion."""

    def setup_method(self):
        """Set up test fixtures."""
        self.schema = fixture_schema()

    def test_tables_keep_declaration_order(self):
        """Test that tables are listed in document order."""
        assert self.schema.table_names == [
            "Maintenance_request", "Maintenance_recommendation", "Maintenance_order", "Installation",
        ]
        assert self.schema.order("installation") == 3

    def test_lookups_are_case_insensitive(self):
        """Test table and column lookups ignore case."""
        table = self.schema.table("MAINTENANCE_ORDER")
        assert table.name == "Maintenance_order"
        assert table.column("COST").data_type is DataType.DECIMAL
        assert self.schema.canonical("installation") == "Installation"

    def test_type_aliases(self):
        """Test source-specific type names map to the closed type set."""
        assert parse_data_type("varchar(200)") is DataType.STRING
        assert parse_data_type("NUMBER") is DataType.DECIMAL
        assert parse_data_type("datetime") is DataType.TIMESTAMP
        with pytest.raises(SchemaError, match="unsupported column type"):
            parse_data_type("geometry")

    def test_accepts_path_text_and_mapping(self):
        """Test the loader takes a path, JSON text or a parsed document."""
        text = SCHEMA_PATH.read_text(encoding="utf-8")
        from_text = load_schema(text)
        from_mapping = load_schema(json.loads(text))
        assert from_text.table_names == self.schema.table_names
        assert from_mapping.foreign_keys == self.schema.foreign_keys

    def test_synonyms_deduplicated_by_normalized_form(self):
        """Test duplicate synonyms collapse to the first spelling."""
        schema = load_schema(minimal_document(tables=[
            {"name": "A", "synonyms": ["Work Order", "work-order", "job"],
             "columns": [{"name": "id", "type": "int", "pk": True}]},
        ], foreign_keys=[]))
        assert schema.table("A").synonyms == ("Work Order", "job")

    def test_key_columns(self):
        """Test primary keys and foreign-key columns count as keys."""
        assert self.schema.is_key_column("Maintenance_order", "id")
        assert self.schema.is_key_column("Maintenance_order", "installation_name")
        assert self.schema.is_key_column("Installation", "name")
        assert not self.schema.is_key_column("Maintenance_order", "cost")

    def test_round_trip_document(self):
        """Test serializing and reloading keeps the schema."""
        again = load_schema(schema_to_document(self.schema))
        assert again == self.schema


class TestSchemaValidation:
    """Test cases for malformed schema documents."""

    def test_duplicate_table(self):
        """Test duplicate table names are rejected regardless of case."""
        document = minimal_document()
        document["tables"].append({"name": "a", "columns": [{"name": "id", "type": "int"}]})
        with pytest.raises(SchemaError, match="duplicate table"):
            load_schema(document)

    def test_duplicate_column(self):
        """Test duplicate column names are rejected."""
        document = minimal_document()
        document["tables"][0]["columns"].append({"name": "ID", "type": "int"})
        with pytest.raises(SchemaError, match="duplicate column"):
            load_schema(document)

    def test_foreign_key_unknown_table(self):
        """Test foreign keys must reference declared tables."""
        document = minimal_document(foreign_keys=[
            {"from_table": "B", "to_table": "Z", "columns": [{"from": "a_id", "to": "id"}]},
        ])
        with pytest.raises(SchemaError, match="unknown table 'Z'"):
            load_schema(document)

    def test_foreign_key_unknown_column(self):
        """Test foreign keys must reference declared columns."""
        document = minimal_document(foreign_keys=[
            {"from_table": "B", "to_table": "A", "columns": [{"from": "missing", "to": "id"}]},
        ])
        with pytest.raises(SchemaError, match="unknown column 'B.missing'"):
            load_schema(document)

    def test_negative_weight(self):
        """Test negative selection weights are rejected."""
        document = minimal_document()
        document["tables"][0]["weight"] = -1
        with pytest.raises(SchemaError, match="negative selection weight"):
            load_schema(document)

    def test_malformed_json(self):
        """Test unparseable JSON text reports a schema error."""
        with pytest.raises(SchemaError, match="malformed schema document"):
            load_schema("{not json")

    def test_missing_file(self, tmp_path):
        """Test a missing schema file reports a schema error."""
        with pytest.raises(SchemaError, match="cannot read schema file"):
            load_schema(tmp_path / "absent.json")


class TestReferentialGraph:
    """Test cases for the referential graph."""

    def test_one_edge_per_foreign_key(self):
        """Test every foreign key becomes its own edge, parallel ones included."""
        document = minimal_document()
        document["tables"][1]["columns"].append({"name": "other_a_id", "type": "integer"})
        document["foreign_keys"].append(
            {"from_table": "B", "to_table": "A", "columns": [{"from": "other_a_id", "to": "id"}]}
        )
        graph = build_referential_graph(load_schema(document))
        assert len(graph.edges) == 2
        assert graph.graph.number_of_edges("A", "B") == 2

    def test_components(self):
        """Test disconnected tables form separate components."""
        document = minimal_document()
        document["tables"].append({"name": "C", "columns": [{"name": "id", "type": "int", "pk": True}]})
        graph = build_referential_graph(load_schema(document))
        assert connected_component(graph, "a") == {"A", "B"}
        assert connected_component(graph, "C") == {"C"}
        assert len(graph.components()) == 2

    def test_fixture_schema_is_connected(self):
        """Test the maintenance schema forms one component."""
        graph = build_referential_graph(fixture_schema())
        assert connected_component(graph, "Installation") == set(fixture_schema().table_names)


class TestRenderDDL:
    """Test cases for simplified DDL rendering."""

    def setup_method(self):
        """Set up test fixtures."""
        self.schema = fixture_schema()

    def test_restricted_columns_in_schema_order(self):
        """Test only requested tables and columns appear, in declaration order."""
        ddl = render_ddl(
            self.schema,
            ["Installation", "Maintenance_order"],
            {"Installation": ["type", "name"], "Maintenance_order": ["id", "cost"]},
        )
        assert ddl == (
            "CREATE TABLE Maintenance_order (\n"
            "    id INTEGER PRIMARY KEY,\n"
            "    cost DECIMAL\n"
            ");\n"
            "\n"
            "CREATE TABLE Installation (\n"
            "    name TEXT PRIMARY KEY,\n"
            "    type TEXT\n"
            ");"
        )

    def test_reserved_names_quoted(self):
        """Test tables and columns named after keywords are quoted in the DDL."""
        ddl = render_ddl(order_schema(), ["Order"], {"Order": ["id", "group"]})
        assert ddl == (
            'CREATE TABLE "Order" (\n'
            "    id INTEGER PRIMARY KEY,\n"
            '    "group" TEXT\n'
            ");"
        )

    def test_unknown_column(self):
        """Test unknown requested columns are rejected."""
        with pytest.raises(SchemaError, match="unknown column"):
            render_ddl(self.schema, ["Installation"], {"Installation": ["name", "height"]})

    def test_table_without_columns(self):
        """Test each requested table needs at least one column."""
        with pytest.raises(SchemaError, match="no columns requested"):
            render_ddl(self.schema, ["Installation"], {})


class TestNormalizeTerm:
    """Test cases for term normalization."""

    @pytest.mark.parametrize("term,expected", [
        ("E-176", "e176"),
        ("Situação", "situacao"),
        ("  Work Order ", "workorder"),
        ("P_52", "p52"),
    ])
    def test_normalize(self, term, expected):
        """Test case, accents and punctuation are folded away."""
        assert normalize_term(term) == expected
