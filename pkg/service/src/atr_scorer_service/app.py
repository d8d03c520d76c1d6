"""FastAPI application for the scorer wire protocol.

Protocol (bit-exact):

* ``POST /v1/score`` body ``{"query": str, "tables": [{"id", "text"}...]}``;
  200 response ``{"threshold_logit": num, "table_logits": [num...],
  "embeddings": optional}``.
* 400 malformed body; 413 assembled sequence over the token budget; 503
  while the backend is loading.
* ``GET /v1/health`` returns ``{"status": "ok", "max_tokens": N}`` once
  ready, 503 before.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

DEFAULT_MAX_TOKENS = 8192

THRESHOLD_MARKER = "[THR]"
TABLE_MARKER = "[TAB]"

# Accounting for the stub backend: alphanumeric runs are one token each,
# any other non-space character is its own token.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\s]")


def stub_token_count(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


class TableIn(BaseModel):
    id: str
    text: str


class ScoreIn(BaseModel):
    query: str
    tables: list[TableIn]


@dataclass
class ServiceConfig:
    """Exactly one of ``stub_path`` / ``model_path`` must be set."""

    stub_path: str | None = None
    model_path: str | None = None
    max_tokens: int = DEFAULT_MAX_TOKENS
    device: str = "cpu"
    return_embeddings: bool = False

    def __post_init__(self) -> None:
        if bool(self.stub_path) == bool(self.model_path):
            raise ValueError("configure exactly one of stub_path / model_path")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class StubBackend:
    """Echoes logits from a fixed lookup; loads instantly."""

    def __init__(self, path: str, max_tokens: int):
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        self.lookup = {k: float(v) for k, v in spec["table_logits"].items()}
        self.threshold_logit = float(spec["threshold_logit"])
        self.max_tokens = max_tokens

    def sequence_tokens(self, body: ScoreIn) -> int:
        parts = [THRESHOLD_MARKER, body.query]
        for table in body.tables:
            parts.append(TABLE_MARKER)
            parts.append(table.text)
        return stub_token_count(" ".join(parts))

    def score(self, body: ScoreIn) -> dict:
        logits = []
        for table in body.tables:
            if table.id not in self.lookup:
                raise KeyError(table.id)
            logits.append(self.lookup[table.id])
        return {"threshold_logit": self.threshold_logit, "table_logits": logits}


def create_app(config: ServiceConfig, defer_load: bool = False) -> FastAPI:
    """Build the service app; ``defer_load`` starts with the backend absent
    (503 everywhere) until :func:`load_backend` runs."""
    app = FastAPI(title="table-relevance scorer")
    app.state.config = config
    app.state.backend = None
    app.state.lock = threading.Lock()

    if not defer_load:
        load_backend(app)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body"})

    @app.get("/v1/health")
    async def health():
        if app.state.backend is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok", "max_tokens": config.max_tokens}

    @app.post("/v1/score")
    async def score(body: ScoreIn):
        backend = app.state.backend
        if backend is None:
            return JSONResponse(status_code=503, content={"error": "model loading"})
        if not body.tables:
            return JSONResponse(status_code=400, content={"error": "at least one table required"})
        if backend.sequence_tokens(body) > config.max_tokens:
            return JSONResponse(
                status_code=413,
                content={"error": f"assembled sequence exceeds {config.max_tokens} tokens"},
            )
        try:
            payload = backend.score(body)
        except KeyError as exc:
            return JSONResponse(status_code=400, content={"error": f"unknown table id {exc}"})
        return payload

    return app


def load_backend(app: FastAPI) -> None:
    """Instantiate the configured backend (idempotent, thread-safe)."""
    config: ServiceConfig = app.state.config
    with app.state.lock:
        if app.state.backend is not None:
            return
        if config.stub_path:
            app.state.backend = StubBackend(config.stub_path, config.max_tokens)
        else:
            from .model import EncoderBackend

            app.state.backend = EncoderBackend(
                config.model_path,
                max_tokens=config.max_tokens,
                device=config.device,
                return_embeddings=config.return_embeddings,
            )
