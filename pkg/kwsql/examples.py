"""Example pairs with similarity retrieval, intercalation and FROM-clause rewriting."""

import hashlib
import itertools
import json
import logging
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Set, Union

import numpy as np

from .errors import ExampleStoreError, SQLAnalysisError
from .schema import fold
from .sqltext import Edit, analyze, apply_edits, from_tables, quote_identifier
from .views import ViewDefinition

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 256
_TOKEN = re.compile(r"\w+")

Embedder = Callable[[str], np.ndarray]


class HashingEmbedder:
    """Hashed bag of tokens with sublinear term weights, L2-normalized."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("embedding dimension must be positive")
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dimension

    def __call__(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.casefold())
        if not tokens and text.strip():
            tokens = [text.strip().casefold()]
        vector = np.zeros(self.dimension, dtype=np.float64)
        for token, count in sorted(Counter(tokens).items()):
            vector[self._bucket(token)] += 1.0 + math.log(count)
        norm = np.linalg.norm(vector)
        if norm > 0:
            vector /= norm
        return vector


class EndpointEmbedder:
    """Embeddings from an OpenAI-compatible endpoint."""

    def __init__(self, client: Any, model: str):
        self.client = client
        self.model = model
        self.dimension: Optional[int] = None

    def __call__(self, text: str) -> np.ndarray:
        response = self.client.embeddings.create(model=self.model, input=text or " ")
        vector = np.asarray(response.data[0].embedding, dtype=np.float64)
        if self.dimension is None:
            self.dimension = int(vector.shape[0])
        elif vector.shape[0] != self.dimension:
            raise ExampleStoreError(f"embedding endpoint changed dimension to {vector.shape[0]}")
        norm = np.linalg.norm(vector)
        return vector / norm if norm > 0 else vector


_default_embedder = HashingEmbedder()


def embed(text: str, embedder: Optional[Embedder] = None) -> np.ndarray:
    """Unit vector for ``text``, from the hashing embedder unless another is given."""
    return (embedder or _default_embedder)(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, zero when either vector is null."""
    norms = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.dot(a, b)) / norms if norms else 0.0


@dataclass
class ExamplePair:
    """A (question, SQL) pair over base tables."""

    id: str
    question: str
    sql: str

    @property
    def tables(self) -> FrozenSet[str]:
        """Tables the SQL reads from, at any nesting depth."""
        return from_tables(self.sql)

    def to_dict(self) -> dict:
        return {"id": self.id, "question": self.question, "sql": self.sql}


class ExampleStore:
    """Examples with one embedding per question; reads are lock-free, ``add`` is serialized."""

    def __init__(self, examples: Iterable[ExamplePair] = (), embedder: Optional[Embedder] = None):
        self.embedder: Embedder = embedder or HashingEmbedder()
        self.examples: List[ExamplePair] = []
        self._vectors: List[np.ndarray] = []
        self._ids: Set[str] = set()
        self._lock = threading.Lock()
        for example in examples:
            self.add(example)

    def add(self, example: ExamplePair) -> None:
        """Embed and append ``example``; ids must be unique and the SQL analyzable."""
        try:
            example.tables
        except SQLAnalysisError as e:
            raise ExampleStoreError(f"example {example.id}: {e}") from e
        vector = self.embedder(example.question)
        with self._lock:
            if example.id in self._ids:
                raise ExampleStoreError(f"duplicate example id '{example.id}'")
            self._ids.add(example.id)
            self.examples.append(example)
            self._vectors.append(vector)

    @property
    def vectors(self) -> List[np.ndarray]:
        return list(self._vectors)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[ExamplePair]:
        return iter(list(self.examples))

    def get(self, example_id: str) -> ExamplePair:
        for example in self.examples:
            if example.id == example_id:
                return example
        raise ExampleStoreError(f"unknown example '{example_id}'")

    def save(self, path: Union[str, Path]) -> None:
        save_store(self, path)

    @classmethod
    def load(cls, path: Union[str, Path], embedder: Optional[Embedder] = None) -> "ExampleStore":
        return load_store(path, embedder)


def retrieve_similar(
    store: ExampleStore, question: str, k: int, table_filter: Optional[Iterable[str]] = None
) -> List[ExamplePair]:
    """Top-k examples by cosine similarity; ties go to the smaller id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query = store.embedder(question)
    allowed = {fold(t) for t in table_filter} if table_filter is not None else None
    scored = []
    for example, vector in zip(store.examples, store.vectors):
        if allowed is not None and not {fold(t) for t in example.tables} <= allowed:
            continue
        scored.append((-round(cosine(vector, query), 12), example.id, example))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [example for _, _, example in scored[:k]]


def intercalate(lists: Sequence[Sequence[ExamplePair]], k: int) -> List[ExamplePair]:
    """Round-robin merge of per-sub-question lists, first occurrence of each id kept."""
    if not lists:
        raise ExampleStoreError("no example lists to intercalate")
    merged: List[ExamplePair] = []
    seen: Set[str] = set()
    for row in itertools.zip_longest(*lists):
        for example in row:
            if example is None or example.id in seen:
                continue
            seen.add(example.id)
            merged.append(example)
    return merged[:k]


def rewrite_from_clause(sql: str, view: ViewDefinition, warnings: Optional[List[str]] = None) -> str:
    """Point an example's FROM block at ``view`` and rename its column references."""
    analysis = analyze(sql)
    columns = view.column_map()
    table_columns = view.table_columns()
    edits: List[Edit] = []

    def warn(message: str) -> None:
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)

    for scope in analysis.scopes:
        if not scope.tables or scope.derived_tables or scope.from_span is None:
            continue
        if [fold(ref.name) for ref in scope.tables] == [fold(view.name)]:
            continue
        aliases = {}
        for ref in scope.tables:
            aliases[fold(ref.name)] = ref.name
            if ref.alias:
                aliases[fold(ref.alias)] = ref.name
        edits.append((scope.from_span[0], scope.from_span[1], quote_identifier(view.name)))

        for ref in analysis.column_refs(scope):
            if ref.qualifier is not None:
                table = aliases.get(fold(ref.qualifier))
                if table is None:
                    continue
                output = columns.get((fold(table), fold(ref.column)))
                if output is None:
                    warn(f"unmapped column {ref.qualifier}.{ref.column} for view {view.name}")
                else:
                    edits.append((ref.start, ref.end, quote_identifier(output)))
                continue
            owners = [
                ref_table.name for ref_table in scope.tables
                if fold(ref.column) in table_columns.get(fold(ref_table.name), set())
            ]
            if len(owners) == 1:
                output = columns[(fold(owners[0]), fold(ref.column))]
                edits.append((ref.start, ref.end, quote_identifier(output)))
            elif len(owners) > 1:
                warn(f"ambiguous column {ref.column} for view {view.name}")
    return apply_edits(analysis.sql, edits)


def save_store(store: ExampleStore, path: Union[str, Path]) -> None:
    """Write one JSON object per example, in insertion order."""
    with open(path, "w", encoding="utf-8") as f:
        for example in store.examples:
            f.write(json.dumps(example.to_dict(), ensure_ascii=False) + "\n")


def load_store(path: Union[str, Path], embedder: Optional[Embedder] = None) -> ExampleStore:
    """Read a JSONL examples file; malformed lines are reported with their number."""
    store = ExampleStore(embedder=embedder)
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ExampleStoreError(f"cannot open examples file {path}: {e}") from e
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                example = ExamplePair(str(raw["id"]), raw["question"], raw["sql"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ExampleStoreError(f"{path}: line {number}: malformed example: {e}") from e
            try:
                store.add(example)
            except ExampleStoreError as e:
                raise ExampleStoreError(f"{path}: line {number}: {e}") from e
    logger.info("Loaded %d examples from %s", len(store), path)
    return store
