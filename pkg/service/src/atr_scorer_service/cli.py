"""Command-line launcher: ``atr-scorer-service --stub spec.json --port 8100``."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import DEFAULT_MAX_TOKENS, ServiceConfig, create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atr-scorer-service")
    backend = parser.add_mutually_exclusive_group(required=True)
    backend.add_argument("--stub", help="lookup JSON: {threshold_logit, table_logits:{id: logit}}")
    backend.add_argument("--model", help="encoder checkpoint directory with a logit head")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    parser.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--embeddings", action="store_true",
        help="include marker hidden states as table embeddings (model mode)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ServiceConfig(
            stub_path=args.stub,
            model_path=args.model,
            max_tokens=args.max_tokens,
            device=args.device,
            return_embeddings=args.embeddings,
        )
        app = create_app(config)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
