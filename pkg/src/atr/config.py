"""Engine configuration: one TOML document, overridable by CLI flags.

The remote scorer endpoint additionally honors the ``ATR_SCORER_ENDPOINT``
environment variable (flags override the environment, the environment
overrides the file).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import InputError
from .losses import LossWeights

# Dataset presets for the sliding window: (window_size, retention_size).
WINDOW_PRESETS: dict[str, tuple[int, int]] = {
    "spider": (20, 15),
    "bird": (20, 15),
    "spider2": (10, 5),
}

ENDPOINT_ENV_VAR = "ATR_SCORER_ENDPOINT"


@dataclass
class PathsConfig:
    corpus: str = "out/corpus.jsonl"
    joins: str = "out/joins.jsonl"
    embeddings: str = ""
    candidates: str = "out/candidates.jsonl"
    queries: str = ""
    output_dir: str = "out"


@dataclass
class FirstStageConfig:
    provider: str = "hashed"  # "hashed" | "file"
    dim: int = 1024
    top_n: int = 50


@dataclass
class RerankConfig:
    preset: str = "spider"
    window_size: int | None = None
    retention_size: int | None = None

    def resolve(self) -> tuple[int, int]:
        if self.window_size is not None and self.retention_size is not None:
            return self.window_size, self.retention_size
        if self.preset not in WINDOW_PRESETS:
            raise InputError(f"unknown rerank preset '{self.preset}' (field rerank.preset)")
        w, r = WINDOW_PRESETS[self.preset]
        return (self.window_size or w, self.retention_size or r)


@dataclass
class ScorerConfig:
    kind: str = "mock"  # "mock" | "remote"
    mock_path: str = ""
    endpoint: str = ""
    max_sequence_tokens: int = 8192
    retries: int = 3

    def resolved_endpoint(self) -> str:
        return os.environ.get(ENDPOINT_ENV_VAR) or self.endpoint


@dataclass
class PreprocessConfig:
    max_table_tokens: int = 512
    split_ratio: float = 0.85
    seed: int = 13


@dataclass
class RuntimeConfig:
    workers: int = 0  # 0 = number of CPUs


@dataclass
class EngineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    first_stage: FirstStageConfig = field(default_factory=FirstStageConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def validate(self) -> None:
        if self.first_stage.top_n < 1:
            raise InputError("first_stage.top_n must be >= 1")
        if self.first_stage.provider not in ("hashed", "file"):
            raise InputError("first_stage.provider must be 'hashed' or 'file'")
        if self.first_stage.dim < 1:
            raise InputError("first_stage.dim must be >= 1")
        w, r = self.rerank.resolve()
        if r >= w:
            raise InputError("rerank.retention_size must be smaller than rerank.window_size")
        if self.scorer.kind not in ("mock", "remote"):
            raise InputError("scorer.kind must be 'mock' or 'remote'")
        if self.scorer.max_sequence_tokens < 1:
            raise InputError("scorer.max_sequence_tokens must be >= 1")
        if not 0.0 < self.preprocess.split_ratio < 1.0:
            raise InputError("preprocess.split_ratio must be in (0, 1)")


def _section(data: dict, name: str) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise InputError(f"config section [{name}] must be a table")
    return section


def _apply(obj, section: dict, section_name: str):
    known = set(obj.__dataclass_fields__)
    for key, value in section.items():
        if key not in known:
            raise InputError(f"unknown config key '{section_name}.{key}'")
        obj = replace(obj, **{key: value})
    return obj


def load_config(path: Path | str | None) -> EngineConfig:
    """Load an :class:`EngineConfig`; ``None`` yields pure defaults."""
    config = EngineConfig()
    if path is None:
        return config
    fpath = Path(path)
    if not fpath.exists():
        raise InputError(f"config file not found: {fpath}")
    data = _toml_loads(fpath.read_text(encoding="utf-8"), fpath)
    config.paths = _apply(config.paths, _section(data, "paths"), "paths")
    config.first_stage = _apply(config.first_stage, _section(data, "first_stage"), "first_stage")
    config.rerank = _apply(config.rerank, _section(data, "rerank"), "rerank")
    config.scorer = _apply(config.scorer, _section(data, "scorer"), "scorer")
    loss_section = _section(data, "loss")
    loss_kwargs = {}
    for key, value in loss_section.items():
        if key not in ("alpha", "beta", "lambda_rc", "gamma_sg", "margin"):
            raise InputError(f"unknown config key 'loss.{key}'")
        loss_kwargs[key] = float(value)
    config.loss = LossWeights(**{**_weights_dict(config.loss), **loss_kwargs})
    config.preprocess = _apply(config.preprocess, _section(data, "preprocess"), "preprocess")
    config.runtime = _apply(config.runtime, _section(data, "runtime"), "runtime")
    config.validate()
    return config


def _weights_dict(w: LossWeights) -> dict:
    return {
        "alpha": w.alpha,
        "beta": w.beta,
        "lambda_rc": w.lambda_rc,
        "gamma_sg": w.gamma_sg,
        "margin": w.margin,
    }


def _toml_loads(text: str, source: Path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"malformed config file {source}: {exc}") from exc
