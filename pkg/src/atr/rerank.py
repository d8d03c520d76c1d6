"""Sliding-window adaptive reranking.

The reranker consumes a first-stage candidate list (best rank first) and walks
it from the worst-ranked end in overlapping windows: the first pass scores the
``W`` lowest-ranked tables, keeps the top ``R`` by logit, and each later pass
merges the retained tables with the next ``W - R`` candidates in original
order. A table's fate is sealed in the pass where it is dropped from retention
(or, for the survivors, in the final pass): its sealed logit and that pass's
boundary logit decide whether it is retrieved.

The final ranking orders all candidates by sealed logit (ties: better initial
rank first), and the retrieved set is exactly the tables whose sealed logit
strictly exceeds the boundary logit of their sealing pass. For any scorer
whose logits do not depend on window composition, this is equivalent to
scoring every candidate in a single pass and cutting at the boundary, while
each pass stays bounded at ``W`` tables.

``threshold_rank`` reports the boundary's 1-based position in the final
ranking, so ``k_q == threshold_rank - 1`` always holds. Each pass also records
a ``finalized`` flag: it turns true once the boundary logit ranks below the
retention cut inside a window, i.e. once the retained set lies entirely above
the boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, token_count
from .errors import InputError, ScorerError
from .firststage import Candidate
from .scorer import ScoreRequest, Scorer, assemble_sequence


@dataclass(frozen=True)
class WindowConfig:
    """Per-pass capacity ``window_size`` and carry-over ``retention_size``."""

    window_size: int
    retention_size: int

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise InputError(f"window_size must be positive, got {self.window_size}")
        if self.retention_size < 1:
            raise InputError(f"retention_size must be positive, got {self.retention_size}")
        if self.retention_size >= self.window_size:
            raise InputError(
                f"retention_size must be smaller than window_size, "
                f"got retention_size={self.retention_size}, window_size={self.window_size}"
            )


@dataclass
class PassTrace:
    """One scoring pass: window contents (best initial rank first) and logits."""

    window: list[str]
    threshold_logit: float
    table_logits: list[float]
    retained: list[str]
    finalized: bool
    window_tokens: int


@dataclass
class RerankOutcome:
    """Result of reranking one query's candidate list."""

    retrieved: list[str]
    threshold_rank: int
    k_q: int
    ranking: list[str]
    trace: list[PassTrace]
    pass_count: int
    max_window_tokens: int
    total_window_tokens: int


def _validate_candidates(candidates: Sequence[Candidate]) -> None:
    if not candidates:
        raise InputError("candidate list is empty")
    for i, cand in enumerate(candidates):
        if cand.rank != i + 1:
            raise InputError(f"candidate ranks must be 1..N in order; got rank {cand.rank} at position {i}")
    for prev, nxt in zip(candidates, candidates[1:]):
        if nxt.similarity > prev.similarity:
            raise InputError("candidate similarities must be non-increasing in rank")


def _score_window(
    query_text: str,
    window: list[int],
    candidates: Sequence[Candidate],
    corpus: Corpus,
    scorer: Scorer,
    pass_index: int,
):
    records = [corpus.get(candidates[i].table_id) for i in window]
    try:
        response = scorer.score(ScoreRequest(query_text=query_text, tables=tuple(records)))
    except (InputError, ScorerError) as exc:
        raise type(exc)(f"pass {pass_index}: {exc}") from exc
    tokens = token_count(assemble_sequence(query_text, records))
    return response, tokens


def _boundary_rank(table_logits: Sequence[float], threshold_logit: float) -> int:
    # 1-based position the boundary logit would take among the window's table
    # logits sorted descending; a table tying the boundary ranks above it.
    return 1 + sum(1 for v in table_logits if v >= threshold_logit)


def rerank(
    query_text: str,
    candidates: Sequence[Candidate],
    config: WindowConfig,
    scorer: Scorer,
    corpus: Corpus,
) -> RerankOutcome:
    """Adaptively rerank ``candidates`` and keep the tables above the boundary.

    ``candidates`` must be rank-ordered (rank 1 first, similarity
    non-increasing). Every window is passed to the scorer best-initial-rank
    first. Scorer failures propagate with the failing pass index attached.
    """
    _validate_candidates(candidates)
    w, r = config.window_size, config.retention_size
    n = len(candidates)

    idx = n
    retained: list[int] = []
    retained_order: list[int] = []
    sealed: dict[int, tuple[float, bool]] = {}
    trace: list[PassTrace] = []
    finalized = False
    pass_index = 0
    last_logits: dict[int, float] = {}
    last_threshold = 0.0

    while idx > 0:
        if not retained:
            lo = max(0, idx - w)
            fresh = list(range(lo, idx))
            idx -= w
        else:
            lo = max(0, idx - (w - r))
            fresh = list(range(lo, idx))
            idx -= w - r
        window = sorted(fresh + retained)
        pass_index += 1
        response, tokens = _score_window(query_text, window, candidates, corpus, scorer, pass_index)
        logits = list(response.table_logits)

        by_logit = sorted(range(len(window)), key=lambda j: (-logits[j], window[j]))
        keep = by_logit[:r]
        retained = [window[j] for j in keep]
        retained_order = list(retained)
        for j in by_logit[r:]:
            sealed[window[j]] = (logits[j], logits[j] > response.threshold_logit)

        finalized = finalized or _boundary_rank(logits, response.threshold_logit) > r
        last_logits = {window[j]: logits[j] for j in range(len(window))}
        last_threshold = response.threshold_logit
        trace.append(
            PassTrace(
                window=[candidates[i].table_id for i in window],
                threshold_logit=response.threshold_logit,
                table_logits=logits,
                retained=[candidates[i].table_id for i in retained_order],
                finalized=finalized,
                window_tokens=tokens,
            )
        )

    for i in retained:
        sealed[i] = (last_logits[i], last_logits[i] > last_threshold)

    ranking_idx = sorted(sealed, key=lambda i: (-sealed[i][0], i))
    k_q = sum(1 for _, above in sealed.values() if above)
    window_tokens = [p.window_tokens for p in trace]
    return RerankOutcome(
        retrieved=[candidates[i].table_id for i in ranking_idx[:k_q]],
        threshold_rank=k_q + 1,
        k_q=k_q,
        ranking=[candidates[i].table_id for i in ranking_idx],
        trace=trace,
        pass_count=len(trace),
        max_window_tokens=max(window_tokens),
        total_window_tokens=sum(window_tokens),
    )


def rerank_bruteforce(
    query_text: str,
    candidates: Sequence[Candidate],
    scorer: Scorer,
    corpus: Corpus,
) -> RerankOutcome:
    """Single-pass oracle: score all candidates at once and cut at the boundary.

    Sequence-length overflow propagates when the full candidate list does not
    fit one scorer call.
    """
    _validate_candidates(candidates)
    window = list(range(len(candidates)))
    response, tokens = _score_window(query_text, window, candidates, corpus, scorer, 1)
    logits = list(response.table_logits)
    order = sorted(window, key=lambda i: (-logits[i], i))
    k_q = sum(1 for v in logits if v > response.threshold_logit)
    trace = [
        PassTrace(
            window=[candidates[i].table_id for i in window],
            threshold_logit=response.threshold_logit,
            table_logits=logits,
            retained=[],
            finalized=True,
            window_tokens=tokens,
        )
    ]
    return RerankOutcome(
        retrieved=[candidates[i].table_id for i in order[:k_q]],
        threshold_rank=k_q + 1,
        k_q=k_q,
        ranking=[candidates[i].table_id for i in order],
        trace=trace,
        pass_count=1,
        max_window_tokens=tokens,
        total_window_tokens=tokens,
    )


def pass_count_for(n_candidates: int, config: WindowConfig) -> int:
    """Closed-form number of scoring passes for ``n_candidates`` tables."""
    extra = max(0, n_candidates - config.window_size)
    step = config.window_size - config.retention_size
    return 1 + -(-extra // step)


def outcome_row(query_id: str, outcome: RerankOutcome, with_trace: bool = False) -> dict:
    """Serializable ``rerank.jsonl`` row for one query."""
    row = {
        "query_id": query_id,
        "retrieved": outcome.retrieved,
        "k_q": outcome.k_q,
        "threshold_rank": outcome.threshold_rank,
        "pass_count": outcome.pass_count,
        "max_window_tokens": outcome.max_window_tokens,
    }
    if with_trace:
        row["trace"] = [
            {
                "window": p.window,
                "threshold_logit": p.threshold_logit,
                "table_logits": p.table_logits,
                "retained": p.retained,
                "finalized": p.finalized,
                "window_tokens": p.window_tokens,
            }
            for p in outcome.trace
        ]
    return row


def write_rerank(path: Path | str, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def load_rerank(path: Path | str) -> list[dict]:
    fpath = Path(path)
    if not fpath.exists():
        raise InputError(f"rerank file not found: {fpath}")
    return [
        json.loads(line)
        for line in fpath.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
