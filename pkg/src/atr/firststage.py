"""First-stage retrieval: embedding providers and top-N cosine ranking.

Two providers implement the same ``vector_for(key, text)`` contract:

* :class:`HashedEmbedder` — deterministic hashed bag-of-tokens vectors, so the
  whole pipeline runs without any model.
* :class:`FileEmbedder` — precomputed vectors looked up by id, for plugging in
  real embedding models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .corpus import Corpus, QueryRecord, tokenize
from .errors import InputError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class EmbeddingProvider(Protocol):
    dim: int

    def vector_for(self, key: str, text: str) -> np.ndarray: ...


class HashedEmbedder:
    """Hashed bag-of-tokens embedding.

    Each token hashes to one of ``dim`` buckets; bucket weights are term
    counts; the vector is L2-normalized. Deterministic by construction.
    """

    def __init__(self, dim: int = 1024):
        if dim < 1:
            raise InputError(f"embedding dim must be positive, got {dim}")
        self.dim = dim

    def vector_for(self, key: str, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise InputError(f"cannot embed zero-token text (id '{key}')")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            vec[fnv1a64(tok.encode("utf-8")) % self.dim] += 1.0
        return vec / np.linalg.norm(vec)


class FileEmbedder:
    """Embedding lookup backed by a JSONL store.

    Format: a header line ``{"dim": D}`` followed by ``{"id": ..., "values":
    [...]}`` lines. Unknown ids raise :class:`InputError` naming the id.
    """

    def __init__(self, path: Path | str):
        fpath = Path(path)
        if not fpath.exists():
            raise InputError(f"embeddings file not found: {fpath}")
        lines = [ln for ln in fpath.read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise InputError(f"embeddings file is empty: {fpath}")
        header = json.loads(lines[0])
        if "dim" not in header:
            raise InputError(f"embeddings file missing header dim line: {fpath}")
        self.dim = int(header["dim"])
        self._vectors: dict[str, np.ndarray] = {}
        for ln in lines[1:]:
            row = json.loads(ln)
            values = np.asarray(row["values"], dtype=np.float64)
            if values.shape != (self.dim,):
                raise InputError(
                    f"embedding for id '{row['id']}' has dim {values.shape[0]}, expected {self.dim}"
                )
            self._vectors[row["id"]] = values

    def vector_for(self, key: str, text: str) -> np.ndarray:
        try:
            return self._vectors[key]
        except KeyError:
            raise InputError(f"no embedding stored for id '{key}'") from None


def write_embeddings(
    path: Path | str,
    provider: EmbeddingProvider,
    corpus: Corpus,
    queries: Iterable[QueryRecord] = (),
) -> None:
    """Materialize provider vectors for corpus tables (and queries) as JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": provider.dim}) + "\n")
        for record in corpus:
            vec = provider.vector_for(record.table_id, record.flattened_text)
            fh.write(json.dumps({"id": record.table_id, "values": [float(v) for v in vec]}) + "\n")
        for q in queries:
            vec = provider.vector_for(q.query_id, q.text)
            fh.write(json.dumps({"id": q.query_id, "values": [float(v) for v in vec]}) + "\n")


@dataclass(frozen=True)
class Candidate:
    """A corpus table with its first-stage similarity and 1-based rank."""

    table_id: str
    similarity: float
    rank: int


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def retrieve_top_n(
    query: QueryRecord, corpus: Corpus, n: int, provider: EmbeddingProvider
) -> list[Candidate]:
    """Rank the corpus by query-table cosine similarity and keep the best n.

    Returns ``min(n, |corpus|)`` candidates with ranks ``1..k``, similarity
    non-increasing, ties broken by ascending table id.
    """
    if n < 1:
        raise InputError(f"top-n must be positive, got {n}")
    if len(corpus) == 0:
        raise InputError("corpus is empty")
    qvec = provider.vector_for(query.query_id, query.text)
    scored = [
        (cosine(qvec, provider.vector_for(r.table_id, r.flattened_text)), r.table_id)
        for r in corpus
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        Candidate(table_id=tid, similarity=sim, rank=i + 1)
        for i, (sim, tid) in enumerate(scored[:n])
    ]


def write_candidates(path: Path | str, rows: Iterable[tuple[str, list[Candidate]]]) -> None:
    """Write ``candidates.jsonl``: one line per query."""
    with open(path, "w", encoding="utf-8") as fh:
        for query_id, candidates in rows:
            fh.write(
                json.dumps(
                    {
                        "query_id": query_id,
                        "candidates": [
                            {"table_id": c.table_id, "similarity": c.similarity, "rank": c.rank}
                            for c in candidates
                        ],
                    }
                )
                + "\n"
            )


def load_candidates(path: Path | str) -> list[tuple[str, list[Candidate]]]:
    """Load a ``candidates.jsonl`` file, validating the rank permutation."""
    fpath = Path(path)
    if not fpath.exists():
        raise InputError(f"candidates file not found: {fpath}")
    rows: list[tuple[str, list[Candidate]]] = []
    for line_no, line in enumerate(fpath.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        cands = [
            Candidate(table_id=c["table_id"], similarity=float(c["similarity"]), rank=int(c["rank"]))
            for c in row["candidates"]
        ]
        if [c.rank for c in cands] != list(range(1, len(cands) + 1)):
            raise InputError(f"candidate ranks are not 1..N at {fpath}:{line_no}")
        rows.append((row["query_id"], cands))
    return rows
