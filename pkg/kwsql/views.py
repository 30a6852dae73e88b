"""Steiner-tree join synthesis and the single equijoin view built from it."""

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
from networkx.utils import UnionFind

from .errors import SteinerError, ViewError
from .schema import GraphEdge, ReferentialGraph, RelationalSchema, build_referential_graph, fold
from .sqltext import SQL_KEYWORDS, analyze, apply_edits, quote_identifier

logger = logging.getLogger(__name__)

DEFAULT_STRIP_PREFIXES: Tuple[str, ...] = ("Maintenance_",)
MAX_VIEW_NAME = 120


@dataclass(frozen=True)
class SteinerTree:
    """Tables and foreign-key edges of a minimum join tree."""

    nodes: FrozenSet[str]
    edges: Tuple[GraphEdge, ...]


def _steiner_cost(simple: nx.Graph, terminals: Sequence[str]) -> int:
    """Dreyfus-Wagner dynamic program over terminal subsets with unit edge weights."""
    dist = dict(nx.all_pairs_shortest_path_length(simple))
    vertices = list(simple.nodes)
    full = (1 << len(terminals)) - 1
    infinity = float("inf")
    dp: List[Dict[str, float]] = [dict.fromkeys(vertices, infinity) for _ in range(full + 1)]
    for i, terminal in enumerate(terminals):
        for v in vertices:
            dp[1 << i][v] = dist[terminal][v]
    for mask in range(1, full + 1):
        if mask & (mask - 1) == 0:
            continue
        low = mask & -mask
        merged: Dict[str, float] = {}
        for v in vertices:
            best = infinity
            sub = (mask - 1) & mask
            while sub:
                if sub & low:
                    best = min(best, dp[sub][v] + dp[mask ^ sub][v])
                sub = (sub - 1) & mask
            merged[v] = best
        dp[mask] = {v: min(merged[u] + dist[u][v] for u in vertices) for v in vertices}
    return int(min(dp[full].values()))


def _spanning_edges(graph: ReferentialGraph, chosen: Set[str]) -> Optional[List[GraphEdge]]:
    """Lexicographically smallest spanning tree of the induced subgraph, or None if disconnected."""
    candidates = sorted(
        (edge for edge in graph.edges if edge.table_a in chosen and edge.table_b in chosen),
        key=lambda edge: edge.sort_key,
    )
    forest = UnionFind(chosen)
    picked: List[GraphEdge] = []
    for edge in candidates:
        if forest[edge.table_a] != forest[edge.table_b]:
            forest.union(edge.table_a, edge.table_b)
            picked.append(edge)
    return picked if len(picked) == len(chosen) - 1 else None


def steiner_tree(graph: ReferentialGraph, terminals: Iterable[str]) -> SteinerTree:
    """Minimum-edge tree spanning ``terminals``; ties go to the smallest sorted edge keys."""
    nodes = sorted({graph.node(t) for t in terminals}, key=fold)
    if not nodes:
        raise SteinerError("no tables to join")

    groups: Dict[FrozenSet[str], List[str]] = {}
    for node in nodes:
        component = frozenset(nx.node_connected_component(graph.graph, node))
        groups.setdefault(component, []).append(node)
    if len(groups) > 1:
        described = "; ".join(
            "{" + ", ".join(sorted(component, key=fold)) + "}"
            for component in sorted(groups, key=lambda c: min(fold(n) for n in c))
        )
        raise SteinerError(f"tables lie in disconnected components: {described}")
    if len(nodes) == 1:
        return SteinerTree(frozenset(nodes), ())

    component = next(iter(groups))
    simple = nx.Graph(graph.graph.subgraph(component))
    cost = _steiner_cost(simple, nodes)

    others = sorted(component - set(nodes), key=fold)
    best_key: Optional[Tuple[Tuple[str, str, int], ...]] = None
    best_edges: List[GraphEdge] = []
    for extra in itertools.combinations(others, cost + 1 - len(nodes)):
        edges = _spanning_edges(graph, set(nodes) | set(extra))
        if edges is None:
            continue
        key = tuple(edge.sort_key for edge in edges)
        if best_key is None or key < best_key:
            best_key, best_edges = key, edges
    if best_key is None:
        raise SteinerError(f"no tree of {cost} joins spans {', '.join(nodes)}")

    tree_nodes = frozenset(nodes) | {n for edge in best_edges for n in (edge.table_a, edge.table_b)}
    logger.debug("Steiner tree for %s: %d joins", nodes, len(best_edges))
    return SteinerTree(tree_nodes, tuple(best_edges))


@dataclass(frozen=True)
class JoinCondition:
    """Equality between a parent column and a child column, by alias."""

    left_alias: str
    left_column: str
    right_alias: str
    right_column: str

    def render(self) -> str:
        q = quote_identifier
        return f"{q(self.left_alias)}.{q(self.left_column)} = {q(self.right_alias)}.{q(self.right_column)}"


@dataclass(frozen=True)
class ViewColumn:
    table: str
    alias: str
    column: str
    output_name: str
    sql_type: str


@dataclass(frozen=True)
class ViewDefinition:
    """A synthesized equijoin view; base tables are listed in join order."""

    name: str
    base_tables: Tuple[Tuple[str, str], ...]
    join_conditions: Tuple[Tuple[JoinCondition, ...], ...]
    projected_columns: Tuple[ViewColumn, ...]

    @property
    def tables(self) -> List[str]:
        return [table for table, _ in self.base_tables]

    def column_map(self) -> Dict[Tuple[str, str], str]:
        """(table, column) folded keys to output names."""
        return {(fold(c.table), fold(c.column)): c.output_name for c in self.projected_columns}

    def table_columns(self) -> Dict[str, Set[str]]:
        columns: Dict[str, Set[str]] = {}
        for c in self.projected_columns:
            columns.setdefault(fold(c.table), set()).add(fold(c.column))
        return columns

    @property
    def output_names(self) -> List[str]:
        return [c.output_name for c in self.projected_columns]


def table_label(table: str, strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES) -> str:
    """Table name without a configured prefix, first letter capitalized."""
    rest = table
    for prefix in strip_prefixes:
        if fold(table).startswith(fold(prefix)) and len(table) > len(prefix):
            rest = table[len(prefix):]
            break
    return rest[:1].upper() + rest[1:]


def default_view_name(labels: Sequence[str], schema: RelationalSchema) -> str:
    """Labels joined by underscores; suffixed with _view when it would read as a keyword or shadow a table."""
    name = "_".join(labels)[:MAX_VIEW_NAME]
    if name.upper() in SQL_KEYWORDS or schema.has_table(name):
        name = name[:MAX_VIEW_NAME - 5] + "_view"
    return name


def synthesize_view(
    schema: RelationalSchema,
    terminals: Iterable[str],
    name: Optional[str] = None,
    graph: Optional[ReferentialGraph] = None,
    strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES,
) -> ViewDefinition:
    """Equijoin view over the Steiner tree of ``terminals`` exposing every base column."""
    graph = graph or build_referential_graph(schema)
    tree = steiner_tree(graph, terminals)

    adjacency: Dict[str, List[GraphEdge]] = {node: [] for node in tree.nodes}
    for edge in tree.edges:
        adjacency[edge.table_a].append(edge)
        adjacency[edge.table_b].append(edge)

    root = min(tree.nodes, key=schema.order)
    order: List[str] = []
    via: Dict[str, Tuple[str, GraphEdge]] = {}
    seen = {root}

    def visit(node: str) -> None:
        order.append(node)
        for edge in sorted(adjacency[node], key=lambda e: (schema.order(e.other(node)), e.ordinal)):
            child = edge.other(node)
            if child not in seen:
                seen.add(child)
                via[child] = (node, edge)
                visit(child)

    visit(root)

    labels = {table: table_label(table, strip_prefixes) for table in order}
    aliases: Dict[str, str] = {}
    used: Set[str] = set()
    for table in order:
        base = labels[table][:1].lower() or "t"
        alias, suffix = base, 2
        while alias in used:
            alias, suffix = f"{base}{suffix}", suffix + 1
        used.add(alias)
        aliases[table] = alias

    groups: List[Tuple[JoinCondition, ...]] = []
    for child in order[1:]:
        parent, edge = via[child]
        fk = edge.foreign_key
        parent_is_source = fold(fk.from_table) == fold(parent)
        conditions = []
        for from_col, to_col in fk.column_pairs:
            if parent_is_source:
                conditions.append(JoinCondition(aliases[parent], from_col, aliases[child], to_col))
            else:
                conditions.append(JoinCondition(aliases[parent], to_col, aliases[child], from_col))
        groups.append(tuple(conditions))

    columns: List[ViewColumn] = []
    taken: Set[str] = set()

    def project(table: str, keys: bool) -> None:
        for col in schema.table(table).columns:
            if col.is_primary_key != keys:
                continue
            output = f"{labels[table]}_{col.name}"
            candidate, suffix = output, 2
            while fold(candidate) in taken:
                candidate, suffix = f"{output}{suffix}", suffix + 1
            taken.add(fold(candidate))
            columns.append(ViewColumn(table, aliases[table], col.name, candidate, col.data_type.sql_type))

    for table in order:
        project(table, keys=True)
    for table in order:
        project(table, keys=False)

    view_name = name or default_view_name([labels[t] for t in order], schema)
    view = ViewDefinition(
        name=view_name,
        base_tables=tuple((table, aliases[table]) for table in order),
        join_conditions=tuple(groups),
        projected_columns=tuple(columns),
    )
    logger.info("Synthesized view %s over %s", view.name, ", ".join(order))
    return view


def view_select_sql(view: ViewDefinition, pretty: bool = False) -> str:
    """SELECT body of the view definition."""
    q = quote_identifier
    items = [f"{q(c.alias)}.{q(c.column)} AS {q(c.output_name)}" for c in view.projected_columns]
    first = " ".join(map(q, view.base_tables[0]))
    joins = []
    for (table, alias), conditions in zip(view.base_tables[1:], view.join_conditions):
        on = " AND ".join(condition.render() for condition in conditions)
        joins.append(f"JOIN {q(table)} {q(alias)} ON {on}")
    if not pretty:
        return " ".join([f"SELECT {', '.join(items)}", f"FROM {first}"] + joins)
    lines = ["SELECT " + (",\n       ".join(items)), f"FROM {first}"] + joins
    return "\n".join(lines)


def render_view_sql(view: ViewDefinition) -> str:
    """CREATE VIEW statement with the body laid out one column per line."""
    return f"CREATE VIEW {quote_identifier(view.name)} AS\n{view_select_sql(view, pretty=True)}"


def render_view_ddl(view: ViewDefinition) -> str:
    """The view presented as a table, for prompt context."""
    lines = [f"    {quote_identifier(c.output_name)} {c.sql_type}" for c in view.projected_columns]
    return f"CREATE TABLE {quote_identifier(view.name)} (\n" + ",\n".join(lines) + "\n);"


def inline_view(query: str, view: ViewDefinition) -> str:
    """Replace every reference to the view with its defining derived table."""
    analysis = analyze(query)
    refs = analysis.table_refs()
    if not any(fold(ref.name) == fold(view.name) for ref in refs):
        raise ViewError(f"query does not reference view '{view.name}'")
    others = sorted({ref.name for ref in refs if fold(ref.name) != fold(view.name)})
    if others:
        raise ViewError(f"query references tables outside view '{view.name}': {', '.join(others)}")
    body = view_select_sql(view)
    edits = [(ref.start, ref.end, f"({body}) {quote_identifier(ref.alias or view.name)}") for ref in refs]
    return apply_edits(analysis.sql, edits)


def view_to_dict(view: ViewDefinition) -> Dict[str, Any]:
    """JSON form used in traces and CLI output."""
    return {
        "name": view.name,
        "tables": [{"table": table, "alias": alias} for table, alias in view.base_tables],
        "joins": [
            [
                {"left": f"{c.left_alias}.{c.left_column}", "right": f"{c.right_alias}.{c.right_column}"}
                for c in group
            ]
            for group in view.join_conditions
        ],
        "columns": [{"alias": c.alias, "column": c.column, "as": c.output_name} for c in view.projected_columns],
    }
