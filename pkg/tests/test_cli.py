"""End-to-end CLI tests over the bundled fixture."""

import csv
import json
from pathlib import Path

import pytest

from atr.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def pipeline(tmp_path):
    """Run ingest + retrieve once per test that needs the full pipeline."""
    corpus = tmp_path / "corpus.jsonl"
    candidates = tmp_path / "candidates.jsonl"
    assert run("ingest", "--schemas", FIXTURES / "schemas", "--out", corpus) == 0
    assert run(
        "retrieve", "--corpus", corpus, "--queries", FIXTURES / "queries.jsonl",
        "--top-n", "50", "--out", candidates,
    ) == 0
    return tmp_path


class TestIngest:
    def test_writes_corpus_and_joins(self, tmp_path):
        out = tmp_path / "corpus.jsonl"
        assert run("ingest", "--schemas", FIXTURES / "schemas", "--out", out) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 54
        assert (tmp_path / "joins.jsonl").exists()

    def test_missing_schema_dir_exits_2(self, tmp_path):
        assert run("ingest", "--schemas", tmp_path / "nope", "--out", tmp_path / "c.jsonl") == 2

    def test_reruns_byte_identical(self, tmp_path):
        out = tmp_path / "corpus.jsonl"
        run("ingest", "--schemas", FIXTURES / "schemas", "--out", out)
        first = out.read_bytes()
        run("ingest", "--schemas", FIXTURES / "schemas", "--out", out)
        assert out.read_bytes() == first


class TestRerankCommand:
    def test_mock_rerank_writes_rows(self, pipeline):
        out = pipeline / "rerank.jsonl"
        code = run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "10", "--retain", "5", "--out", out,
        )
        assert code == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 20
        for row in rows:
            assert set(row) == {
                "query_id", "retrieved", "k_q", "threshold_rank", "pass_count", "max_window_tokens",
            }
            assert row["k_q"] == row["threshold_rank"] - 1
            # 50 candidates, window 10, retention 5 -> 9 passes
            assert row["pass_count"] == 9

    def test_preset_spider_uses_20_15(self, pipeline):
        out = pipeline / "rerank.jsonl"
        code = run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--preset", "spider", "--out", out,
        )
        assert code == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        # 50 candidates with (W, R) = (20, 15) -> 7 passes
        assert all(row["pass_count"] == 7 for row in rows)

    def test_unknown_candidates_path_exits_2(self, tmp_path):
        assert run(
            "rerank", "--candidates", tmp_path / "missing.jsonl",
            "--corpus", tmp_path / "missing_corpus.jsonl",
            "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
        ) == 2

    def test_invalid_window_exits_2(self, pipeline):
        assert run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "5", "--retain", "5",
        ) == 2

    def test_unreachable_remote_scorer_exits_3(self, pipeline):
        assert run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "remote", "--endpoint", "http://127.0.0.1:9",
            "--window", "10", "--retain", "5",
        ) == 3

    def test_trace_flag_adds_traces(self, pipeline):
        out = pipeline / "rerank_trace.jsonl"
        run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "10", "--retain", "5", "--out", out, "--trace",
        )
        row = json.loads(out.read_text().splitlines()[0])
        assert len(row["trace"]) == row["pass_count"]

    def test_reruns_byte_identical(self, pipeline):
        out = pipeline / "rerank.jsonl"
        args = (
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "10", "--retain", "5", "--out", out,
        )
        run(*args)
        first = out.read_bytes()
        run(*args)
        assert out.read_bytes() == first


class TestEvalCommand:
    def rerank_then_eval(self, pipeline, *extra):
        rr = pipeline / "rerank.jsonl"
        run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "10", "--retain", "5", "--out", rr,
            *(["--trace"] if "--anova" in extra else []),
        )
        out = pipeline / "metrics.csv"
        code = run(
            "eval", "--rerank", rr, "--gold", FIXTURES / "gold.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--out", out, *extra,
        )
        return code, out

    def test_macro_matches_committed_spreadsheet(self, pipeline):
        code, out = self.rerank_then_eval(pipeline)
        assert code == 0
        got = {row["query_id"]: row for row in csv.DictReader(out.open())}
        expected = {row["query_id"]: row for row in csv.DictReader((FIXTURES / "expected_metrics.csv").open())}
        assert set(got) == set(expected)
        for qid, row in expected.items():
            for field in ("precision", "recall", "complete_recall", "f1"):
                assert float(got[qid][field]) == pytest.approx(float(row[field]), abs=1e-4), (qid, field)
            if qid != "MACRO":
                assert got[qid]["input_tokens"] == row["input_tokens"]
                assert got[qid]["k_retrieved"] == row["k_retrieved"]

    def test_json_report_written(self, pipeline):
        code, out = self.rerank_then_eval(pipeline)
        assert code == 0
        payload = json.loads(out.with_suffix(".json").read_text())
        assert payload["mean_pass_count"] == 9.0
        assert len(payload["per_query"]) == 20

    def test_anova_and_plot(self, pipeline):
        code, out = self.rerank_then_eval(pipeline, "--anova", "--plot-tsv", str(pipeline / "plot.tsv"))
        assert code == 0
        payload = json.loads(out.with_suffix(".json").read_text())
        # mock logits separate relevant-ish from irrelevant tables sharply
        assert 0.0 <= payload["anova"]["eta_squared"] <= 1.0
        assert set(payload["anova"]["group_sizes"]) == {"relevant", "irrelevant", "threshold"}
        lines = (pipeline / "plot.tsv").read_text().splitlines()
        assert lines[0].split("\t") == ["mean_input_tokens", "value", "metric"]
        assert len(lines) == 5

    def test_anova_without_trace_exits_2(self, pipeline):
        rr = pipeline / "rerank.jsonl"
        run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "mock", "--mock", FIXTURES / "mock_scorer.json",
            "--window", "10", "--retain", "5", "--out", rr,
        )
        assert run(
            "eval", "--rerank", rr, "--gold", FIXTURES / "gold.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--anova",
        ) == 2

    def test_missing_gold_exits_2(self, pipeline):
        rr = pipeline / "rerank.jsonl"
        (pipeline / "rerank.jsonl").write_text("")
        assert run("eval", "--rerank", rr, "--gold", pipeline / "missing.jsonl") == 2


class TestPreprocessCommand:
    def test_outputs(self, pipeline, tmp_path):
        out_dir = tmp_path / "train"
        code = run(
            "preprocess", "--corpus", pipeline / "corpus.jsonl",
            "--joins", pipeline / "joins.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--out-dir", out_dir, "--seed", "5",
        )
        assert code == 0
        train = [json.loads(l) for l in (out_dir / "train.jsonl").read_text().splitlines()]
        val = [json.loads(l) for l in (out_dir / "val.jsonl").read_text().splitlines()]
        assert len(train) + len(val) == 40  # 20 queries x 2 segments
        assert {ex["query_id"] for ex in train}.isdisjoint({ex["query_id"] for ex in val})
        assert (out_dir / "dropped.log").exists()

    def test_high_segment_holds_50_candidates(self, pipeline, tmp_path):
        out_dir = tmp_path / "train"
        run(
            "preprocess", "--corpus", pipeline / "corpus.jsonl",
            "--joins", pipeline / "joins.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--out-dir", out_dir,
        )
        rows = [json.loads(l) for l in (out_dir / "train.jsonl").read_text().splitlines()]
        highs = [r for r in rows if r["segment"] == "HIGH"]
        assert highs and all(len(r["candidates"]) == 50 for r in highs)
        # 54-table corpus -> LOW segments carry the 4 leftovers
        lows = [r for r in rows if r["segment"] == "LOW"]
        assert lows and all(len(r["candidates"]) == 4 for r in lows)


class TestLosscheck:
    def test_closed_form_rows(self, tmp_path):
        batches = tmp_path / "batches.jsonl"
        batches.write_text(
            json.dumps(
                {
                    "table_logits": [0.0],
                    "threshold_logit": 0.0,
                    "relevance": [True],
                }
            )
            + "\n"
        )
        out = tmp_path / "losses.csv"
        assert run("losscheck", "--batches", batches, "--out", out) == 0
        rows = {r["component"]: r for r in csv.DictReader(out.open())}
        ln2 = 0.693147181
        assert float(rows["l1"]["value"]) == pytest.approx(ln2, abs=1e-8)
        assert float(rows["rc"]["value"]) == pytest.approx(ln2, abs=1e-8)
        assert float(rows["l2"]["value"]) == 0.0
        assert "sg" not in rows  # no embeddings in the batch
        assert all(float(r["fd_max_rel_error"]) < 1e-4 for r in rows.values())

    def test_missing_batches_exits_2(self, tmp_path):
        assert run("losscheck", "--batches", tmp_path / "none.jsonl") == 2


class TestConfigAndExitCodes:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            run("--help")
        assert excinfo.value.code == 0

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            run("ingest", "--bogus-flag")
        assert excinfo.value.code == 2

    def test_config_file_drives_defaults(self, pipeline, tmp_path):
        config = tmp_path / "engine.toml"
        config.write_text(
            "\n".join(
                [
                    "[rerank]",
                    'preset = "spider2"',
                    "[scorer]",
                    'kind = "mock"',
                    f'mock_path = "{FIXTURES / "mock_scorer.json"}"',
                ]
            )
        )
        out = pipeline / "rerank.jsonl"
        code = run(
            "--config", config,
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--out", out,
        )
        assert code == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        # spider2 preset is (10, 5): 9 passes over 50 candidates
        assert all(row["pass_count"] == 9 for row in rows)

    def test_invalid_config_value_exits_2(self, tmp_path):
        config = tmp_path / "engine.toml"
        config.write_text("[preprocess]\nsplit_ratio = 1.5\n")
        assert run("--config", config, "losscheck", "--batches", tmp_path / "x.jsonl") == 2

    def test_env_var_overrides_endpoint(self, pipeline, monkeypatch):
        monkeypatch.setenv("ATR_SCORER_ENDPOINT", "http://127.0.0.1:9")
        code = run(
            "rerank", "--candidates", pipeline / "candidates.jsonl",
            "--corpus", pipeline / "corpus.jsonl", "--queries", FIXTURES / "queries.jsonl",
            "--scorer", "remote", "--window", "10", "--retain", "5",
        )
        assert code == 3  # endpoint picked up from the environment, unreachable
