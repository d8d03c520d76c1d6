"""Schema corpus: ingestion, flattening, tokenization, and the join graph.

A corpus is built from one JSON document per database::

    {
      "name": "db1",
      "tables": [
        {"name": "A", "columns": ["x", "y"],
         "foreign_keys": [{"column": "x", "ref_table": "B", "ref_column": "z"}]}
      ]
    }

Every table becomes a :class:`TableRecord` whose ``flattened_text`` is the
single-line serialization scored downstream.  Foreign-key declarations induce
join edges; connected components of that edge set define the per-table group
labels used by the grouping loss and by preprocessing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InputError

# Maximal alphanumeric runs are one token each; every other non-space
# character is its own token. Underscore is not alphanumeric here.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\s]")


def tokenize(text: str) -> list[str]:
    """Split text under the default tokenizer contract."""
    return _TOKEN_RE.findall(text)


def token_count(text: str) -> int:
    """Number of tokens in ``text`` under the default tokenizer contract.

    Deterministic and additive over concatenation with a separating space:
    ``token_count(a + " " + b) == token_count(a) + token_count(b)``.
    """
    return len(_TOKEN_RE.findall(text))


def flatten(database_id: str, table_name: str, columns: Iterable[str]) -> str:
    """Serialize one table as ``<db> | <table> | <col_1>, <col_2>, ...``.

    Stable under repeated calls; raises :class:`InputError` on an empty
    column list.
    """
    cols = list(columns)
    if not cols:
        raise InputError(f"table '{database_id}.{table_name}' has no columns")
    return f"{database_id} | {table_name} | {', '.join(cols)}"


@dataclass(frozen=True)
class TableRecord:
    """One table of the corpus; ``table_id`` is ``<database_id>.<table_name>``."""

    table_id: str
    database_id: str
    table_name: str
    columns: tuple[str, ...]
    flattened_text: str

    @classmethod
    def build(cls, database_id: str, table_name: str, columns: Iterable[str]) -> "TableRecord":
        cols = tuple(columns)
        return cls(
            table_id=f"{database_id}.{table_name}",
            database_id=database_id,
            table_name=table_name,
            columns=cols,
            flattened_text=flatten(database_id, table_name, cols),
        )


@dataclass(frozen=True)
class QueryRecord:
    """A natural-language query with optional gold table labels."""

    query_id: str
    text: str
    gold_table_ids: frozenset[str] = frozenset()


class JoinGraph:
    """Join evidence between tables, derived from foreign-key declarations.

    ``edges`` holds normalized ``(left, right)`` pairs with ``left <= right``;
    a self-referencing foreign key yields a self-edge, which does not affect
    components but records that the database declared join information.
    ``group_label`` maps every corpus table to its connected-component id,
    numbered by first appearance in corpus order.
    """

    def __init__(self, table_ids: Iterable[str], edges: Iterable[tuple[str, str]]):
        ids = list(table_ids)
        self.edges: set[tuple[str, str]] = {
            (a, b) if a <= b else (b, a) for a, b in edges
        }
        parent = {t: t for t in ids}

        def find(x: str) -> str:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra
        self.group_label: dict[str, int] = {}
        next_label = 0
        roots: dict[str, int] = {}
        for t in ids:
            r = find(t)
            if r not in roots:
                roots[r] = next_label
                next_label += 1
            self.group_label[t] = roots[r]

    def touches_database(self, table_ids_of_db: Iterable[str]) -> bool:
        """Whether any join edge involves one of the given tables."""
        ids = set(table_ids_of_db)
        return any(a in ids or b in ids for a, b in self.edges)


class Corpus:
    """Immutable table collection with its join graph; safe for concurrent reads.

    ``databases_with_joins`` records which databases declared any join
    evidence; it is computed from the edge endpoints at construction and
    preserved by filtering (removing tables does not erase declarations).
    """

    def __init__(
        self,
        records: list[TableRecord],
        join_graph: JoinGraph,
        databases_with_joins: frozenset[str] | None = None,
    ):
        self.records = records
        self.join_graph = join_graph
        self._by_id = {r.table_id: r for r in records}
        if databases_with_joins is None:
            db_of = {r.table_id: r.database_id for r in records}
            databases_with_joins = frozenset(
                db_of[t] for a, b in join_graph.edges for t in (a, b) if t in db_of
            )
        self.databases_with_joins = databases_with_joins

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TableRecord]:
        return iter(self.records)

    def __contains__(self, table_id: str) -> bool:
        return table_id in self._by_id

    def get(self, table_id: str) -> TableRecord:
        try:
            return self._by_id[table_id]
        except KeyError:
            raise InputError(f"unknown table id '{table_id}'") from None

    def table_ids(self) -> list[str]:
        return [r.table_id for r in self.records]

    def tables_of_database(self, database_id: str) -> list[str]:
        return [r.table_id for r in self.records if r.database_id == database_id]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InputError(message)


def _parse_document(doc: object, source: str) -> tuple[str, list[dict]]:
    _require(isinstance(doc, dict), f"malformed schema document: {source}: not an object")
    name = doc.get("name")
    _require(isinstance(name, str) and name != "", f"malformed schema document: {source}: missing 'name'")
    tables = doc.get("tables")
    _require(isinstance(tables, list) and tables, f"malformed schema document: {source}: missing 'tables'")
    return name, tables


def ingest_documents(documents: Iterable[tuple[object, str]]) -> Corpus:
    """Build a corpus from parsed (document, source-label) pairs.

    Validates structure, rejects duplicate table ids and column-less tables,
    and resolves foreign keys within each database. Deterministic: identical
    inputs yield an identical corpus, including group labels.
    """
    records: list[TableRecord] = []
    seen: set[str] = set()
    edges: list[tuple[str, str]] = []
    for doc, source in documents:
        db, tables = _parse_document(doc, source)
        local: dict[str, tuple[str, ...]] = {}
        fks: list[tuple[str, dict]] = []
        for t in tables:
            _require(isinstance(t, dict), f"malformed schema document: {source}: table entry is not an object")
            tname = t.get("name")
            _require(isinstance(tname, str) and tname != "", f"malformed schema document: {source}: table missing 'name'")
            cols = t.get("columns")
            _require(isinstance(cols, list), f"malformed schema document: {source}: table '{tname}' missing 'columns'")
            _require(all(isinstance(c, str) for c in cols), f"malformed schema document: {source}: table '{tname}' has non-string columns")
            _require(len(cols) > 0, f"table '{db}.{tname}' has no columns ({source})")
            record = TableRecord.build(db, tname, cols)
            _require(record.table_id not in seen, f"duplicate table id '{record.table_id}' ({source})")
            seen.add(record.table_id)
            local[tname] = record.columns
            records.append(record)
            for fk in t.get("foreign_keys", []) or []:
                _require(isinstance(fk, dict), f"malformed schema document: {source}: foreign key on '{tname}' is not an object")
                fks.append((tname, fk))
        for tname, fk in fks:
            col, ref_table, ref_col = fk.get("column"), fk.get("ref_table"), fk.get("ref_column")
            _require(
                isinstance(col, str) and isinstance(ref_table, str) and isinstance(ref_col, str),
                f"malformed schema document: {source}: foreign key on '{tname}' needs column/ref_table/ref_column",
            )
            _require(col in local[tname], f"malformed schema document: {source}: foreign key column '{tname}.{col}' not declared")
            _require(ref_table in local, f"malformed schema document: {source}: foreign key references unknown table '{ref_table}'")
            _require(ref_col in local[ref_table], f"malformed schema document: {source}: foreign key references unknown column '{ref_table}.{ref_col}'")
            edges.append((f"{db}.{tname}", f"{db}.{ref_table}"))
    graph = JoinGraph((r.table_id for r in records), edges)
    return Corpus(records, graph)


def ingest_schemas(paths: Iterable[Path | str]) -> Corpus:
    """Ingest schema JSON documents from files (order defines corpus order)."""
    documents: list[tuple[object, str]] = []
    for p in paths:
        path = Path(p)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read schema document {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed schema document: {path}: {exc}") from exc
        documents.append((doc, str(path)))
    return ingest_documents(documents)


def write_corpus(corpus: Corpus, path: Path | str) -> None:
    """Write ``corpus.jsonl``: one record per line, plus its group label."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            fh.write(
                json.dumps(
                    {
                        "table_id": r.table_id,
                        "database_id": r.database_id,
                        "table_name": r.table_name,
                        "columns": list(r.columns),
                        "flattened_text": r.flattened_text,
                        "group_label": corpus.join_graph.group_label[r.table_id],
                    }
                )
                + "\n"
            )


def write_joins(corpus: Corpus, path: Path | str) -> None:
    """Write ``joins.jsonl``: normalized join edges, sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in sorted(corpus.join_graph.edges):
            fh.write(json.dumps({"left": a, "right": b}) + "\n")


def load_corpus(corpus_path: Path | str, joins_path: Path | str | None = None) -> Corpus:
    """Load a corpus written by :func:`write_corpus` (+ optional joins file)."""
    records: list[TableRecord] = []
    labels: dict[str, int] = {}
    path = Path(corpus_path)
    if not path.exists():
        raise InputError(f"corpus file not found: {path}")
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed corpus line {path}:{line_no}: {exc}") from exc
        record = TableRecord(
            table_id=row["table_id"],
            database_id=row["database_id"],
            table_name=row["table_name"],
            columns=tuple(row["columns"]),
            flattened_text=row["flattened_text"],
        )
        records.append(record)
        labels[record.table_id] = int(row["group_label"])
    edges: list[tuple[str, str]] = []
    if joins_path is not None:
        jpath = Path(joins_path)
        if not jpath.exists():
            raise InputError(f"joins file not found: {jpath}")
        for line in jpath.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            edges.append((row["left"], row["right"]))
    graph = JoinGraph((r.table_id for r in records), edges)
    # Stored labels win over recomputed ones: edge files are optional.
    graph.group_label = labels
    return Corpus(records, graph)


def load_queries(path: Path | str) -> list[QueryRecord]:
    """Load queries from JSONL lines ``{query_id, text, gold: [table_id...]}``."""
    qpath = Path(path)
    if not qpath.exists():
        raise InputError(f"queries file not found: {qpath}")
    queries: list[QueryRecord] = []
    for line_no, line in enumerate(qpath.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed query line {qpath}:{line_no}: {exc}") from exc
        _require("query_id" in row and "text" in row, f"query line {qpath}:{line_no} needs query_id and text")
        queries.append(
            QueryRecord(
                query_id=str(row["query_id"]),
                text=str(row["text"]),
                gold_table_ids=frozenset(row.get("gold", [])),
            )
        )
    return queries
