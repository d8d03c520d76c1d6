"""Relevance scorer contract: sequence assembly plus mock and remote scorers.

A scorer maps (query, ordered window of tables) to one boundary logit and one
logit per table. The engine never assumes how the logits arise; anything with
a ``score(request) -> ScoreResponse`` method and a ``max_sequence_tokens``
attribute qualifies.

Wire protocol of the remote scorer (bit-exact):

* ``POST /v1/score`` with body ``{"query": str, "tables": [{"id", "text"}...]}``
* 200 response ``{"threshold_logit": num, "table_logits": [num...],
  "embeddings": optional [[num...]...]}``
* 400 malformed body, 413 sequence too long, 503 model loading
* ``GET /v1/health`` -> ``{"status": "ok", "max_tokens": int}``
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .corpus import TableRecord, token_count
from .errors import InputError, ProtocolError, SequenceLengthError, TransportError

THRESHOLD_MARKER = "[THR]"
TABLE_MARKER = "[TAB]"

DEFAULT_MAX_SEQUENCE_TOKENS = 8192


@dataclass(frozen=True)
class ScoreRequest:
    """One scorer invocation: a query plus an ordered window of tables."""

    query_text: str
    tables: tuple[TableRecord, ...]


@dataclass(frozen=True)
class ScoreResponse:
    """Boundary logit plus per-table logits, parallel to the request tables."""

    threshold_logit: float
    table_logits: tuple[float, ...]
    table_embeddings: tuple[tuple[float, ...], ...] | None = None


class Scorer(Protocol):
    max_sequence_tokens: int

    def score(self, request: ScoreRequest) -> ScoreResponse: ...


def assemble_sequence(query_text: str, tables: Sequence[TableRecord]) -> str:
    """Build the scorer input: ``[THR] <query> [TAB] <table_1> [TAB] ...``."""
    if not tables:
        raise InputError("score request needs at least one table")
    parts = [THRESHOLD_MARKER, query_text]
    for record in tables:
        parts.append(TABLE_MARKER)
        parts.append(record.flattened_text)
    return " ".join(parts)


def check_sequence_length(
    query_text: str, tables: Sequence[TableRecord], max_tokens: int
) -> int:
    """Validate the assembled length, naming the first overflowing table.

    Returns the total token count. Token accounting matches
    :func:`atr.corpus.token_count` of the assembled string exactly.
    """
    total = token_count(f"{THRESHOLD_MARKER} {query_text}")
    marker_tokens = token_count(TABLE_MARKER)
    for record in tables:
        total += marker_tokens + token_count(record.flattened_text)
        if total > max_tokens:
            raise SequenceLengthError(
                f"assembled sequence exceeds {max_tokens} tokens at table '{record.table_id}'"
            )
    return total


def _validate_request(request: ScoreRequest, max_tokens: int) -> None:
    if not request.tables:
        raise InputError("score request needs at least one table")
    check_sequence_length(request.query_text, request.tables, max_tokens)


class MockScorer:
    """Window-independent scorer backed by a fixed table-id -> logit map.

    Pure and thread-safe; the logit of a table is identical across all
    windows containing it, which makes exact brute-force equivalence checks
    possible.
    """

    def __init__(
        self,
        table_logits: Mapping[str, float],
        threshold_logit: float,
        max_sequence_tokens: int = DEFAULT_MAX_SEQUENCE_TOKENS,
    ):
        self.table_logits = dict(table_logits)
        self.threshold_logit = float(threshold_logit)
        self.max_sequence_tokens = max_sequence_tokens

    @classmethod
    def from_json(cls, path: Path | str, max_sequence_tokens: int = DEFAULT_MAX_SEQUENCE_TOKENS) -> "MockScorer":
        fpath = Path(path)
        if not fpath.exists():
            raise InputError(f"mock scorer file not found: {fpath}")
        spec = json.loads(fpath.read_text(encoding="utf-8"))
        if "threshold_logit" not in spec or "table_logits" not in spec:
            raise InputError(f"mock scorer file needs threshold_logit and table_logits: {fpath}")
        return cls(
            table_logits={k: float(v) for k, v in spec["table_logits"].items()},
            threshold_logit=float(spec["threshold_logit"]),
            max_sequence_tokens=max_sequence_tokens,
        )

    def score(self, request: ScoreRequest) -> ScoreResponse:
        _validate_request(request, self.max_sequence_tokens)
        logits = []
        for record in request.tables:
            if record.table_id not in self.table_logits:
                raise InputError(f"mock scorer has no logit for table '{record.table_id}'")
            logits.append(self.table_logits[record.table_id])
        return ScoreResponse(threshold_logit=self.threshold_logit, table_logits=tuple(logits))


class RemoteScorer:
    """HTTP client for the scorer wire protocol.

    Transport failures and 503 responses are retried with exponential
    backoff (``retries`` attempts total); protocol violations are not.
    """

    def __init__(
        self,
        endpoint: str,
        max_sequence_tokens: int = DEFAULT_MAX_SEQUENCE_TOKENS,
        retries: int = 3,
        backoff: float = 0.2,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.max_sequence_tokens = max_sequence_tokens
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout

    def health(self) -> dict:
        try:
            resp = requests.get(f"{self.endpoint}/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"health check returned {resp.status_code}")
        return resp.json()

    def score(self, request: ScoreRequest) -> ScoreResponse:
        _validate_request(request, self.max_sequence_tokens)
        body = {
            "query": request.query_text,
            "tables": [{"id": r.table_id, "text": r.flattened_text} for r in request.tables],
        }
        last_failure: str = "no attempts made"
        for attempt in range(self.retries):
            if attempt > 0:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    f"{self.endpoint}/v1/score", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_failure = str(exc)
                continue
            if resp.status_code == 503:
                last_failure = "service unavailable (503)"
                continue
            if resp.status_code == 413:
                raise SequenceLengthError(
                    f"remote scorer rejected the sequence as too long: {resp.text.strip()}"
                )
            if resp.status_code != 200:
                raise ProtocolError(
                    f"remote scorer returned {resp.status_code}: {resp.text.strip()[:200]}"
                )
            return self._parse_response(resp, len(request.tables))
        raise TransportError(
            f"remote scorer unreachable after {self.retries} attempts: {last_failure}"
        )

    def _parse_response(self, resp: requests.Response, n_tables: int) -> ScoreResponse:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"remote scorer sent non-JSON body: {exc}") from exc
        if not isinstance(payload, dict) or "threshold_logit" not in payload or "table_logits" not in payload:
            raise ProtocolError("remote scorer response missing threshold_logit/table_logits")
        logits = payload["table_logits"]
        if not isinstance(logits, list) or len(logits) != n_tables:
            raise ProtocolError(
                f"remote scorer returned {len(logits) if isinstance(logits, list) else 'non-list'} "
                f"table logits for {n_tables} tables"
            )
        values = [float(v) for v in logits]
        threshold = float(payload["threshold_logit"])
        if not all(math.isfinite(v) for v in values) or not math.isfinite(threshold):
            raise ProtocolError("remote scorer returned a non-finite logit")
        embeddings = None
        if payload.get("embeddings") is not None:
            emb = payload["embeddings"]
            if not isinstance(emb, list) or len(emb) != n_tables:
                raise ProtocolError("remote scorer embeddings not parallel to tables")
            dims = {len(e) for e in emb}
            if len(dims) > 1:
                raise ProtocolError("remote scorer embeddings have mixed dimensions")
            embeddings = tuple(tuple(float(x) for x in e) for e in emb)
        return ScoreResponse(
            threshold_logit=threshold, table_logits=tuple(values), table_embeddings=embeddings
        )
