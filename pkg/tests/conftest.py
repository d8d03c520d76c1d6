import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from atr.corpus import Corpus, JoinGraph, TableRecord  # noqa: E402
from atr.firststage import Candidate  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_corpus(n: int, database: str = "db", columns=("a", "b")) -> Corpus:
    """Synthetic corpus of n tables named db.t0 .. db.t{n-1}, no joins."""
    records = [TableRecord.build(database, f"t{i}", list(columns)) for i in range(n)]
    return Corpus(records, JoinGraph([r.table_id for r in records], []))


def make_candidates(n: int, database: str = "db") -> list[Candidate]:
    """Rank-ordered candidates over make_corpus(n)."""
    return [
        Candidate(table_id=f"{database}.t{i}", similarity=float(n - i), rank=i + 1)
        for i in range(n)
    ]
