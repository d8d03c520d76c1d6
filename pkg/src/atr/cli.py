"""Command-line surface for the retrieval pipeline.

Exit codes: 0 success; 2 user/input error (missing files, violated
invariants, unknown flags); 3 scorer or protocol failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import config as config_mod
from . import corpus as corpus_mod
from . import firststage, losses, metrics, preprocess, rerank
from .errors import InputError, ScorerError
from .scorer import MockScorer, RemoteScorer

logger = logging.getLogger("atr")


def _build_provider(cfg: config_mod.EngineConfig, args) -> firststage.EmbeddingProvider:
    provider = getattr(args, "provider", None) or cfg.first_stage.provider
    if provider == "hashed":
        return firststage.HashedEmbedder(dim=cfg.first_stage.dim)
    if provider == "file":
        path = getattr(args, "embeddings", None) or cfg.paths.embeddings
        if not path:
            raise InputError("file provider needs --embeddings (or paths.embeddings in the config)")
        return firststage.FileEmbedder(path)
    raise InputError(f"unknown embedding provider '{provider}'")


def _build_scorer(cfg: config_mod.EngineConfig, args):
    kind = getattr(args, "scorer", None) or cfg.scorer.kind
    if kind == "mock":
        mock_path = getattr(args, "mock", None) or cfg.scorer.mock_path
        if not mock_path:
            raise InputError("mock scorer needs --mock (or scorer.mock_path in the config)")
        return MockScorer.from_json(mock_path, max_sequence_tokens=cfg.scorer.max_sequence_tokens)
    if kind == "remote":
        endpoint = getattr(args, "endpoint", None) or cfg.scorer.resolved_endpoint()
        if not endpoint:
            raise InputError(
                "remote scorer needs --endpoint, ATR_SCORER_ENDPOINT, or scorer.endpoint in the config"
            )
        return RemoteScorer(
            endpoint,
            max_sequence_tokens=cfg.scorer.max_sequence_tokens,
            retries=cfg.scorer.retries,
        )
    raise InputError(f"unknown scorer kind '{kind}'")


def _workers(cfg: config_mod.EngineConfig) -> int:
    return cfg.runtime.workers or os.cpu_count() or 1


def _require_path(value: str | None, flag: str) -> Path:
    if not value:
        raise InputError(f"missing required path for {flag}")
    path = Path(value)
    if not path.exists():
        raise InputError(f"{flag} path does not exist: {path}")
    return path


def cmd_ingest(cfg: config_mod.EngineConfig, args) -> int:
    schema_dir = _require_path(args.schemas, "--schemas")
    files = sorted(schema_dir.glob("*.json"))
    if not files:
        raise InputError(f"no *.json schema documents in {schema_dir}")
    corpus = corpus_mod.ingest_schemas(files)
    out = Path(args.out or cfg.paths.corpus)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_corpus(corpus, out)
    joins_out = Path(args.joins_out) if args.joins_out else out.parent / "joins.jsonl"
    corpus_mod.write_joins(corpus, joins_out)
    logger.info("ingested %d tables from %d documents -> %s, %s", len(corpus), len(files), out, joins_out)
    return 0


def cmd_embed(cfg: config_mod.EngineConfig, args) -> int:
    corpus = corpus_mod.load_corpus(_require_path(args.corpus or cfg.paths.corpus, "--corpus"))
    queries = corpus_mod.load_queries(args.queries) if args.queries else []
    provider_name = args.provider or cfg.first_stage.provider
    store = args.embeddings or cfg.paths.embeddings
    if not store:
        raise InputError("embed needs --embeddings (or paths.embeddings in the config)")
    if provider_name == "hashed":
        provider = firststage.HashedEmbedder(dim=cfg.first_stage.dim)
        Path(store).parent.mkdir(parents=True, exist_ok=True)
        firststage.write_embeddings(store, provider, corpus, queries)
        logger.info("wrote %d embeddings -> %s", len(corpus) + len(queries), store)
        return 0
    if provider_name == "file":
        provider = firststage.FileEmbedder(_require_path(store, "--embeddings"))
        for record in corpus:
            provider.vector_for(record.table_id, record.flattened_text)
        for q in queries:
            provider.vector_for(q.query_id, q.text)
        logger.info("embedding store %s covers %d tables, %d queries", store, len(corpus), len(queries))
        return 0
    raise InputError(f"unknown embedding provider '{provider_name}'")


def cmd_retrieve(cfg: config_mod.EngineConfig, args) -> int:
    corpus = corpus_mod.load_corpus(_require_path(args.corpus or cfg.paths.corpus, "--corpus"))
    queries = corpus_mod.load_queries(_require_path(args.queries or cfg.paths.queries, "--queries"))
    provider = _build_provider(cfg, args)
    top_n = args.top_n or cfg.first_stage.top_n

    def run(query: corpus_mod.QueryRecord):
        return query.query_id, firststage.retrieve_top_n(query, corpus, top_n, provider)

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        rows = list(pool.map(run, queries))
    out = Path(args.out or cfg.paths.candidates)
    out.parent.mkdir(parents=True, exist_ok=True)
    firststage.write_candidates(out, rows)
    logger.info("retrieved top-%d for %d queries -> %s", top_n, len(queries), out)
    return 0


def cmd_rerank(cfg: config_mod.EngineConfig, args) -> int:
    corpus = corpus_mod.load_corpus(_require_path(args.corpus or cfg.paths.corpus, "--corpus"))
    queries = corpus_mod.load_queries(_require_path(args.queries or cfg.paths.queries, "--queries"))
    query_text = {q.query_id: q.text for q in queries}
    candidate_rows = firststage.load_candidates(_require_path(args.candidates or cfg.paths.candidates, "--candidates"))
    scorer = _build_scorer(cfg, args)

    window_size, retention_size = cfg.rerank.resolve()
    if args.preset:
        if args.preset not in config_mod.WINDOW_PRESETS:
            raise InputError(f"unknown rerank preset '{args.preset}'")
        window_size, retention_size = config_mod.WINDOW_PRESETS[args.preset]
    if args.window is not None:
        window_size = args.window
    if args.retain is not None:
        retention_size = args.retain
    window = rerank.WindowConfig(window_size=window_size, retention_size=retention_size)

    def run(item):
        query_id, candidates = item
        if query_id not in query_text:
            raise InputError(f"candidates reference unknown query '{query_id}'")
        outcome = rerank.rerank(query_text[query_id], candidates, window, scorer, corpus)
        return rerank.outcome_row(query_id, outcome, with_trace=args.trace)

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        rows = list(pool.map(run, candidate_rows))
    out = Path(args.out or (Path(cfg.paths.output_dir) / "rerank.jsonl"))
    out.parent.mkdir(parents=True, exist_ok=True)
    rerank.write_rerank(out, rows)
    logger.info(
        "reranked %d queries (window=%d retention=%d) -> %s",
        len(rows), window_size, retention_size, out,
    )
    return 0


def _load_gold(path: Path) -> dict[str, set[str]]:
    gold: dict[str, set[str]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        gold[str(row["query_id"])] = set(row["gold"])
    return gold


def _anova_groups(rows: list[dict], gold: dict[str, set[str]]) -> dict[str, list[float]]:
    relevant: list[float] = []
    irrelevant: list[float] = []
    thresholds: list[float] = []
    for row in rows:
        if "trace" not in row:
            raise InputError(
                "--anova needs per-pass logits: rerun rerank with --trace"
            )
        final_logit: dict[str, float] = {}
        for p in row["trace"]:
            for table_id, logit in zip(p["window"], p["table_logits"]):
                final_logit[table_id] = logit
        thresholds.append(row["trace"][-1]["threshold_logit"])
        gold_set = gold.get(row["query_id"], set())
        for table_id, logit in final_logit.items():
            (relevant if table_id in gold_set else irrelevant).append(logit)
    return {"relevant": relevant, "irrelevant": irrelevant, "threshold": thresholds}


def cmd_eval(cfg: config_mod.EngineConfig, args) -> int:
    rows = rerank.load_rerank(_require_path(args.rerank, "--rerank"))
    gold = _load_gold(_require_path(args.gold, "--gold"))
    corpus = corpus_mod.load_corpus(_require_path(args.corpus or cfg.paths.corpus, "--corpus"))
    queries = corpus_mod.load_queries(_require_path(args.queries or cfg.paths.queries, "--queries"))
    query_text = {q.query_id: q.text for q in queries}

    per_query: list[metrics.QueryReport] = []
    pass_counts: list[int] = []
    for row in rows:
        qid = row["query_id"]
        if qid not in gold:
            raise InputError(f"gold file has no labels for query '{qid}'")
        if qid not in query_text:
            raise InputError(f"queries file has no entry for query '{qid}'")
        scored = metrics.score_query(row["retrieved"], gold[qid])
        tokens = metrics.query_input_tokens(
            query_text[qid], [corpus.get(t) for t in row["retrieved"]]
        )
        per_query.append(
            metrics.QueryReport(
                query_id=qid,
                precision=scored.precision,
                recall=scored.recall,
                complete_recall=scored.complete_recall,
                f1=scored.f1,
                k_retrieved=len(row["retrieved"]),
                input_tokens=tokens,
            )
        )
        pass_counts.append(int(row.get("pass_count", 1)))

    report = metrics.aggregate(per_query, pass_counts)
    anova = metrics.anova_logits(_anova_groups(rows, gold)) if args.anova else None

    out = Path(args.out or (Path(cfg.paths.output_dir) / "metrics.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_metrics_csv(out, report)
    metrics.write_metrics_json(out.with_suffix(".json"), report, anova)
    if args.plot_tsv:
        metrics.write_plot_tsv(args.plot_tsv, report)
    logger.info(
        "macro P=%.1f R=%.1f CR=%.1f F1=%.1f over %d queries -> %s",
        report.macro_precision, report.macro_recall, report.macro_complete_recall,
        report.macro_f1, len(per_query), out,
    )
    if anova is not None:
        logger.info("anova F=%.4g eta^2=%.4f", anova.f_statistic, anova.eta_squared)
    return 0


def cmd_preprocess(cfg: config_mod.EngineConfig, args) -> int:
    corpus = corpus_mod.load_corpus(
        _require_path(args.corpus or cfg.paths.corpus, "--corpus"),
        joins_path=_require_path(args.joins or cfg.paths.joins, "--joins"),
    )
    queries = corpus_mod.load_queries(_require_path(args.queries or cfg.paths.queries, "--queries"))
    provider = _build_provider(cfg, args)
    max_tokens = args.max_table_tokens or cfg.preprocess.max_table_tokens
    ratio = args.ratio or cfg.preprocess.split_ratio
    seed = args.seed if args.seed is not None else cfg.preprocess.seed

    filtered, kept_queries, dropped_filter = preprocess.filter_corpus(corpus, queries, max_tokens)
    examples, dropped_build = preprocess.build_examples(kept_queries, filtered, provider)
    train, val = preprocess.split_train_val(examples, ratio=ratio, seed=seed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preprocess.write_examples(out_dir / "train.jsonl", train)
    preprocess.write_examples(out_dir / "val.jsonl", val)
    preprocess.write_dropped_log(out_dir / "dropped.log", dropped_filter + dropped_build)
    logger.info(
        "built %d examples (%d train / %d val), dropped %d queries -> %s",
        len(examples), len(train), len(val), len(dropped_filter) + len(dropped_build), out_dir,
    )
    return 0


def cmd_losscheck(cfg: config_mod.EngineConfig, args) -> int:
    batches_path = _require_path(args.batches, "--batches")
    weights = cfg.loss
    rows: list[tuple[int, str, float, float]] = []
    for index, line in enumerate(batches_path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        raw = json.loads(line)
        batch = losses.LossBatch.create(
            table_logits=raw["table_logits"],
            threshold_logit=raw["threshold_logit"],
            relevance=raw["relevance"],
            embeddings=raw.get("embeddings"),
            group_labels=raw.get("group_labels"),
        )
        for component in losses.COMPONENTS:
            try:
                value = losses.component_loss(batch, weights, component)
                fd_err = losses.finite_difference_check(batch, weights, h=args.fd_h, which=component)
            except InputError:
                continue  # component precondition unmet for this batch
            rows.append((index, component, value, fd_err))
    out = Path(args.out or (Path(cfg.paths.output_dir) / "losses.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("batch,component,value,fd_max_rel_error\n")
        for index, component, value, fd_err in rows:
            fh.write(f"{index},{component},{value:.9f},{fd_err:.3e}\n")
    logger.info("checked %d (batch, component) pairs -> %s", len(rows), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atr", description="Adaptive table retrieval pipeline")
    parser.add_argument("--config", help="TOML config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the corpus and join graph from schema documents")
    p.add_argument("--schemas", required=True, help="directory of *.json schema documents")
    p.add_argument("--out", help="corpus.jsonl output path")
    p.add_argument("--joins-out", dest="joins_out", help="joins.jsonl output path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="materialize or validate an embedding store")
    p.add_argument("--corpus", help="corpus.jsonl path")
    p.add_argument("--provider", choices=["hashed", "file"])
    p.add_argument("--embeddings", help="embedding store path")
    p.add_argument("--queries", help="optional queries.jsonl to embed as well")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="first-stage top-N retrieval")
    p.add_argument("--corpus", help="corpus.jsonl path")
    p.add_argument("--queries", help="queries.jsonl path")
    p.add_argument("--top-n", dest="top_n", type=int, help="candidates per query (default 50)")
    p.add_argument("--provider", choices=["hashed", "file"])
    p.add_argument("--embeddings", help="embedding store for the file provider")
    p.add_argument("--out", help="candidates.jsonl output path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("rerank", help="sliding-window adaptive reranking")
    p.add_argument("--candidates", help="candidates.jsonl path")
    p.add_argument("--corpus", help="corpus.jsonl path")
    p.add_argument("--queries", help="queries.jsonl path (query texts)")
    p.add_argument("--scorer", choices=["mock", "remote"])
    p.add_argument("--mock", help="mock scorer JSON path")
    p.add_argument("--endpoint", help="remote scorer base URL")
    p.add_argument("--preset", choices=sorted(config_mod.WINDOW_PRESETS))
    p.add_argument("--window", type=int, help="window size W")
    p.add_argument("--retain", type=int, help="retention size R")
    p.add_argument("--trace", action="store_true", help="embed per-pass traces in the output")
    p.add_argument("--out", help="rerank.jsonl output path")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="retrieval metrics against gold labels")
    p.add_argument("--rerank", required=True, help="rerank.jsonl path")
    p.add_argument("--gold", required=True, help="gold labels JSONL path")
    p.add_argument("--corpus", help="corpus.jsonl path (token accounting)")
    p.add_argument("--queries", help="queries.jsonl path (token accounting)")
    p.add_argument("--anova", action="store_true", help="logit-separation ANOVA (needs --trace reranks)")
    p.add_argument("--plot-tsv", dest="plot_tsv", help="write plot-ready TSV points")
    p.add_argument("--out", help="metrics.csv output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("preprocess", help="build training examples from a labeled corpus")
    p.add_argument("--corpus", help="corpus.jsonl path")
    p.add_argument("--joins", help="joins.jsonl path")
    p.add_argument("--queries", help="queries.jsonl path")
    p.add_argument("--out-dir", dest="out_dir", required=True, help="output directory")
    p.add_argument("--max-table-tokens", dest="max_table_tokens", type=int)
    p.add_argument("--ratio", type=float, help="train split ratio (default 0.85)")
    p.add_argument("--seed", type=int)
    p.add_argument("--provider", choices=["hashed", "file"])
    p.add_argument("--embeddings", help="embedding store for the file provider")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("losscheck", help="loss values and gradient checks over JSONL batches")
    p.add_argument("--batches", required=True, help="JSONL batch file")
    p.add_argument("--fd-h", dest="fd_h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--out", help="losses.csv output path")
    p.set_defaults(func=cmd_losscheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config)
        return args.func(cfg, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ScorerError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
