"""Run configuration: one JSON file, every field defaulted, hashed for traceability."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError
from .taxonomy import TASKS

MODULES = ("record_review", "retrieval", "guidance")


@dataclass
class BackendConfig:
    kind: str = "mock"  # "http" | "mock"
    base_url: str | None = None
    model: str = "llama-3-8b-instruct"
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    inflight: int = 8
    timeout: float = 60.0
    rules: str | None = None  # mock rule file


@dataclass
class EmbeddingConfig:
    kind: str = "hash"  # "http" | "hash"
    dim: int = 256
    seed: int = 0
    base_url: str | None = None
    model: str = "clinical-embedding"


@dataclass
class RecordReviewConfig:
    enabled: bool = True
    threshold: float = 0.1
    score: str = "max"  # "max" | "mean"
    lexicon: str | None = None
    overall_column: bool = False


@dataclass
class RetrievalConfig:
    enabled: bool = True
    k: int = 10
    budget: int = 8000
    query_mode: str = "report_history"  # "report" | "report_history" | "full"
    reranker: str = "identity"  # "identity" | "threshold" | "filter"
    reranker_args: dict = field(default_factory=dict)


@dataclass
class GuidanceConfig:
    enabled: bool = True
    max_rounds: int = 2
    stages: list[str] = field(default_factory=lambda: list(TASKS))
    chief_k: int = 5


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    chief_backend: BackendConfig = field(default_factory=BackendConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    record_review: RecordReviewConfig = field(default_factory=RecordReviewConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    templates: str | None = None
    seed: int = 0

    def validate(self) -> "RunConfig":
        for b in (self.backend, self.chief_backend):
            if b.kind not in ("http", "mock"):
                raise InputError(f"backend.kind must be 'http' or 'mock', got {b.kind!r}")
        if self.embedding.kind not in ("http", "hash"):
            raise InputError(f"embedding.kind must be 'http' or 'hash', got {self.embedding.kind!r}")
        if self.record_review.score not in ("max", "mean"):
            raise InputError(f"record_review.score must be 'max' or 'mean', got {self.record_review.score!r}")
        if self.retrieval.query_mode not in ("report", "report_history", "full"):
            raise InputError(f"unknown retrieval.query_mode {self.retrieval.query_mode!r}")
        if self.retrieval.k < 1:
            raise InputError("retrieval.k must be >= 1")
        if self.guidance.max_rounds < 0:
            raise InputError("guidance.max_rounds must be >= 0")
        bad = set(self.guidance.stages) - set(TASKS)
        if bad:
            raise InputError(f"guidance.stages has unknown stages {sorted(bad)}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def disable(self, modules) -> "RunConfig":
        """Return a copy with the named modules switched off."""
        cfg = from_dict(self.to_dict())
        for m in modules:
            if m not in MODULES:
                raise InputError(f"cannot disable {m!r}; choose from {MODULES}")
            getattr(cfg, m).enabled = False
        return cfg


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "backend"): BackendConfig,
    (RunConfig, "chief_backend"): BackendConfig,
    (RunConfig, "embedding"): EmbeddingConfig,
    (RunConfig, "record_review"): RecordReviewConfig,
    (RunConfig, "retrieval"): RetrievalConfig,
    (RunConfig, "guidance"): GuidanceConfig,
}


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config").validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Load a JSON config; relative file paths inside it resolve against its directory."""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    cfg = from_dict(data)
    base = path.parent
    for b in (cfg.backend, cfg.chief_backend):
        if b.rules and not Path(b.rules).is_absolute():
            b.rules = str(base / b.rules)
    if cfg.record_review.lexicon and not Path(cfg.record_review.lexicon).is_absolute():
        cfg.record_review.lexicon = str(base / cfg.record_review.lexicon)
    if cfg.templates and not Path(cfg.templates).is_absolute():
        cfg.templates = str(base / cfg.templates)
    return cfg
