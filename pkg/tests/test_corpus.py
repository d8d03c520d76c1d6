"""Corpus ingestion, flattening, tokenization, and join-graph tests."""

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atr.corpus import (
    Corpus,
    JoinGraph,
    TableRecord,
    flatten,
    ingest_documents,
    ingest_schemas,
    load_corpus,
    token_count,
    tokenize,
    write_corpus,
    write_joins,
)
from atr.errors import InputError

from oracles import oracle_components, oracle_tokens


def make_doc(name, tables, fks=()):
    by_table = {}
    for table, column, ref_table, ref_column in fks:
        by_table.setdefault(table, []).append(
            {"column": column, "ref_table": ref_table, "ref_column": ref_column}
        )
    return {
        "name": name,
        "tables": [
            {"name": t, "columns": list(cols), "foreign_keys": by_table.get(t, [])}
            for t, cols in tables.items()
        ],
    }


class TestFlatten:
    def test_two_columns(self):
        assert flatten("db1", "A", ["x", "y"]) == "db1 | A | x, y"

    def test_single_column(self):
        assert flatten("db1", "A", ["x"]) == "db1 | A | x"

    def test_idempotent_inputs(self):
        first = flatten("db1", "A", ["x", "y"])
        assert flatten("db1", "A", ["x", "y"]) == first

    def test_empty_columns_rejected(self):
        with pytest.raises(InputError):
            flatten("db1", "A", [])


class TestTokenCount:
    def test_empty(self):
        assert token_count("") == 0

    def test_single_word(self):
        assert token_count("select") == 1

    def test_flattened_line(self):
        # enumerated by the tokenizer rule: db1, |, A, |, x, ",", y
        text = "db1 | A | x, y"
        assert oracle_tokens(text) == ["db1", "|", "A", "|", "x", ",", "y"]
        assert token_count(text) == 7

    def test_matches_oracle_enumeration(self):
        for text in ["a_b c", "x,y", "[THR] hello [TAB]", "foo.bar(baz)", "  spaced   out "]:
            assert tokenize(text) == oracle_tokens(text)

    @given(st.text(max_size=80), st.text(max_size=80))
    def test_additive_over_space_joined_concatenation(self, a, b):
        assert token_count(a + " " + b) == token_count(a) + token_count(b)


class TestIngest:
    def test_single_fk_component(self):
        doc = make_doc("db1", {"A": ["x", "y"], "B": ["z"]}, [("A", "x", "B", "z")])
        corpus = ingest_documents([(doc, "db1.json")])
        assert len(corpus) == 2
        assert corpus.join_graph.edges == {("db1.A", "db1.B")}
        assert corpus.join_graph.group_label == {"db1.A": 0, "db1.B": 0}

    def test_no_edges_yields_singleton_components(self):
        docs = [
            (make_doc("db1", {"A": ["x"], "B": ["y"]}), "db1.json"),
            (make_doc("db2", {"C": ["z"]}), "db2.json"),
        ]
        corpus = ingest_documents(docs)
        assert len(corpus) == 3
        assert sorted(corpus.join_graph.group_label.values()) == [0, 1, 2]

    def test_large_scale_document_count(self):
        # 155 database documents totaling 6,321 tables
        docs = []
        remaining = 6321
        for d in range(155):
            count = min(41, remaining - (155 - d - 1))
            tables = {f"t{i}": ["a", "b"] for i in range(count)}
            docs.append((make_doc(f"db{d:03d}", tables), f"db{d:03d}.json"))
            remaining -= count
        assert remaining == 0
        corpus = ingest_documents(docs)
        assert len(corpus) == 6321

    def test_duplicate_table_id_rejected(self):
        doc = {"name": "db1", "tables": [{"name": "A", "columns": ["x"]}, {"name": "A", "columns": ["y"]}]}
        with pytest.raises(InputError, match="db1.A"):
            ingest_documents([(doc, "db1.json")])

    def test_zero_columns_rejected(self):
        doc = {"name": "db1", "tables": [{"name": "A", "columns": []}]}
        with pytest.raises(InputError, match="db1.A"):
            ingest_documents([(doc, "db1.json")])

    def test_malformed_document_names_path(self, tmp_path):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        with pytest.raises(InputError, match="broken.json"):
            ingest_schemas([bad])

    def test_unknown_fk_target_rejected(self):
        doc = make_doc("db1", {"A": ["x"]}, [("A", "x", "Missing", "y")])
        with pytest.raises(InputError, match="Missing"):
            ingest_documents([(doc, "db1.json")])

    def test_deterministic_serialization(self, tmp_path):
        docs = [
            make_doc("db1", {"A": ["x", "y"], "B": ["z"]}, [("A", "x", "B", "z")]),
            make_doc("db2", {"C": ["u"], "D": ["v"]}),
        ]
        outputs = []
        for run in range(2):
            corpus = ingest_documents([(d, f"{d['name']}.json") for d in docs])
            cpath = tmp_path / f"corpus{run}.jsonl"
            jpath = tmp_path / f"joins{run}.jsonl"
            write_corpus(corpus, cpath)
            write_joins(corpus, jpath)
            outputs.append((cpath.read_bytes(), jpath.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_round_trip(self, tmp_path):
        doc = make_doc("db1", {"A": ["x", "y"], "B": ["z"], "C": ["w"]}, [("A", "x", "B", "z")])
        corpus = ingest_documents([(doc, "db1.json")])
        write_corpus(corpus, tmp_path / "corpus.jsonl")
        write_joins(corpus, tmp_path / "joins.jsonl")
        loaded = load_corpus(tmp_path / "corpus.jsonl", tmp_path / "joins.jsonl")
        assert loaded.table_ids() == corpus.table_ids()
        assert loaded.join_graph.group_label == corpus.join_graph.group_label
        assert loaded.join_graph.edges == corpus.join_graph.edges
        assert [r.flattened_text for r in loaded] == [r.flattened_text for r in corpus]


class TestJoinGraph:
    def test_partition_matches_union_find_oracle(self):
        rng = random.Random(7)
        for _ in range(50):
            n = rng.randint(1, 40)
            ids = [f"db.t{i}" for i in range(n)]
            edges = [
                (rng.choice(ids), rng.choice(ids))
                for _ in range(rng.randint(0, 2 * n))
            ]
            graph = JoinGraph(ids, edges)
            by_label = {}
            for tid, label in graph.group_label.items():
                by_label.setdefault(label, set()).add(tid)
            assert sorted(frozenset(g) for g in by_label.values()) == oracle_components(ids, edges)

    def test_every_table_labeled_exactly_once(self):
        ids = [f"db.t{i}" for i in range(10)]
        graph = JoinGraph(ids, [("db.t0", "db.t9")])
        assert set(graph.group_label) == set(ids)

    def test_self_edge_keeps_singleton_component_and_counts_as_evidence(self):
        doc = make_doc("db1", {"A": ["x"], "B": ["y"]}, [("A", "x", "A", "x")])
        corpus = ingest_documents([(doc, "db1.json")])
        assert corpus.join_graph.group_label["db1.A"] != corpus.join_graph.group_label["db1.B"]
        assert "db1" in corpus.databases_with_joins


class TestCorpusContainer:
    def test_get_unknown_id(self):
        corpus = ingest_documents([(make_doc("db1", {"A": ["x"]}), "db1.json")])
        with pytest.raises(InputError, match="nope"):
            corpus.get("db1.nope")

    def test_flattened_text_is_rederivable(self):
        corpus = ingest_documents([(make_doc("db1", {"A": ["x", "y"]}), "db1.json")])
        record = corpus.get("db1.A")
        assert record.flattened_text == flatten(record.database_id, record.table_name, record.columns)
