"""Training-example construction from a labeled corpus.

For each labeled query the first-stage ranker retrieves a 100-table pool,
split into a HIGH segment (ranks 1-50) and a LOW segment (ranks 51-100); each
segment becomes one training example carrying per-candidate relevance bits and
join-group labels. The LOW segment usually contains no relevant tables, which
teaches the scorer to return nothing when nothing fits.

Corpus filtering removes oversized tables (and the queries that need them) as
well as queries whose databases carry no join evidence, since group labels
cannot be trusted there.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, QueryRecord, token_count
from .errors import InputError
from .firststage import EmbeddingProvider, retrieve_top_n

logger = logging.getLogger(__name__)

POOL_SIZE = 100
SEGMENT_SIZE = 50


@dataclass(frozen=True)
class TrainingExample:
    """One (query, candidate segment) training instance."""

    query_id: str
    segment: str  # "HIGH" | "LOW"
    candidates: tuple[str, ...]
    relevance: tuple[bool, ...]
    group_labels: tuple[int, ...]


@dataclass(frozen=True)
class DroppedQuery:
    query_id: str
    reason: str


def filter_corpus(
    corpus: Corpus,
    queries: Sequence[QueryRecord],
    max_tokens: int = 512,
) -> tuple[Corpus, list[QueryRecord], list[DroppedQuery]]:
    """Drop oversized tables, then queries they invalidate.

    A table is oversized when its flattened text exceeds ``max_tokens``.
    A query is dropped when its gold set intersects the removed tables, or
    when none of its gold tables' databases contributes any join evidence
    (joinability undeterminable). Idempotent.
    """
    removed = {r.table_id for r in corpus if token_count(r.flattened_text) > max_tokens}
    kept_records = [r for r in corpus if r.table_id not in removed]
    new_corpus = Corpus(kept_records, corpus.join_graph, corpus.databases_with_joins)

    kept_queries: list[QueryRecord] = []
    dropped: list[DroppedQuery] = []
    for q in queries:
        oversized_gold = sorted(q.gold_table_ids & removed)
        if oversized_gold:
            dropped.append(
                DroppedQuery(q.query_id, f"gold table(s) exceed {max_tokens} tokens: {', '.join(oversized_gold)}")
            )
            continue
        gold_dbs = {corpus.get(t).database_id for t in q.gold_table_ids if t in corpus}
        if gold_dbs and not (gold_dbs & corpus.databases_with_joins):
            dropped.append(DroppedQuery(q.query_id, "joinability undeterminable: no foreign keys in gold databases"))
            continue
        kept_queries.append(q)
    for d in dropped:
        logger.info("dropped query %s: %s", d.query_id, d.reason)
    return new_corpus, kept_queries, dropped


def build_examples(
    queries: Sequence[QueryRecord],
    corpus: Corpus,
    provider: EmbeddingProvider,
    pool_size: int = POOL_SIZE,
    segment_size: int = SEGMENT_SIZE,
) -> tuple[list[TrainingExample], list[DroppedQuery]]:
    """Two examples per labeled query: HIGH (ranks 1-50) and LOW (51-100).

    Queries whose gold tables are missing from the corpus (or that carry no
    labels at all) are dropped with a logged reason.
    """
    examples: list[TrainingExample] = []
    dropped: list[DroppedQuery] = []
    labels = corpus.join_graph.group_label
    for q in queries:
        if not q.gold_table_ids:
            dropped.append(DroppedQuery(q.query_id, "no gold labels"))
            logger.info("dropped query %s: no gold labels", q.query_id)
            continue
        missing = sorted(t for t in q.gold_table_ids if t not in corpus)
        if missing:
            dropped.append(DroppedQuery(q.query_id, f"gold table(s) not in corpus: {', '.join(missing)}"))
            logger.info("dropped query %s: gold missing from corpus", q.query_id)
            continue
        pool = retrieve_top_n(q, corpus, pool_size, provider)
        for segment, chunk in (("HIGH", pool[:segment_size]), ("LOW", pool[segment_size:])):
            if not chunk:
                continue
            ids = tuple(c.table_id for c in chunk)
            examples.append(
                TrainingExample(
                    query_id=q.query_id,
                    segment=segment,
                    candidates=ids,
                    relevance=tuple(t in q.gold_table_ids for t in ids),
                    group_labels=tuple(labels[t] for t in ids),
                )
            )
    return examples, dropped


def split_train_val(
    examples: Sequence[TrainingExample], ratio: float = 0.85, seed: int = 13
) -> tuple[list[TrainingExample], list[TrainingExample]]:
    """Deterministic query-grouped split: both segments of a query stay together."""
    if not 0.0 < ratio < 1.0:
        raise InputError(f"split ratio must be in (0, 1), got {ratio}")
    query_ids = sorted({ex.query_id for ex in examples})
    rng = random.Random(seed)
    rng.shuffle(query_ids)
    n_train = math.ceil(ratio * len(query_ids))
    train_ids = set(query_ids[:n_train])
    train = [ex for ex in examples if ex.query_id in train_ids]
    val = [ex for ex in examples if ex.query_id not in train_ids]
    return train, val


def write_examples(path: Path | str, examples: Sequence[TrainingExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "query_id": ex.query_id,
                        "segment": ex.segment,
                        "candidates": list(ex.candidates),
                        "relevance": list(ex.relevance),
                        "group_labels": list(ex.group_labels),
                    }
                )
                + "\n"
            )


def write_dropped_log(path: Path | str, dropped: Sequence[DroppedQuery]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dropped:
            fh.write(f"{d.query_id}\t{d.reason}\n")
