"""Chat-completion and embedding backends.

Two families: live OpenAI-compatible HTTP endpoints, and deterministic mocks
(scripted chat rules, seeded hashing embedder) that keep every test hermetic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .errors import BackendUnavailable, BadResponse, DimensionMismatch

log = logging.getLogger(__name__)

ENV_BASE = "MAP_API_BASE"
ENV_KEY = "MAP_API_KEY"
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("system_prompt and user_prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency: float
    backend_id: str


# ---------------------------------------------------------------------------
# Wire format (OpenAI-compatible). Bodies are compact JSON, key order fixed.


def _dumps(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _loads(body: bytes | str):
    try:
        return json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadResponse(f"body is not JSON: {exc}") from None


def encode_chat_request(model: str, req: ChatRequest) -> bytes:
    return _dumps(
        {
            "model": model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
    )


def decode_chat_request(body: bytes) -> tuple[str, ChatRequest]:
    obj = _loads(body)
    try:
        roles = {m["role"]: m["content"] for m in obj["messages"]}
        req = ChatRequest(
            system_prompt=roles["system"],
            user_prompt=roles["user"],
            temperature=obj["temperature"],
            max_tokens=obj["max_tokens"],
        )
        return obj["model"], req
    except (KeyError, TypeError) as exc:
        raise BadResponse(f"malformed chat request: {exc!r}") from None


@dataclass(frozen=True)
class ChatCompletion:
    """Parsed ``/chat/completions`` response body."""

    id: str
    created: int
    model: str
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0


def encode_chat_response(c: ChatCompletion) -> bytes:
    return _dumps(
        {
            "id": c.id,
            "object": "chat.completion",
            "created": c.created,
            "model": c.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": c.content},
                    "finish_reason": c.finish_reason,
                }
            ],
            "usage": {
                "prompt_tokens": c.prompt_tokens,
                "completion_tokens": c.completion_tokens,
                "total_tokens": c.prompt_tokens + c.completion_tokens,
            },
        }
    )


def decode_chat_response(body: bytes) -> ChatCompletion:
    obj = _loads(body)
    try:
        choice = obj["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BadResponse(f"missing choices[0].message.content: {exc!r}") from None
    if not isinstance(content, str):
        raise BadResponse("choices[0].message.content is not a string")
    usage = obj.get("usage") or {}
    return ChatCompletion(
        id=str(obj.get("id", "")),
        created=int(obj.get("created", 0)),
        model=str(obj.get("model", "")),
        content=content,
        finish_reason=str(choice.get("finish_reason") or "stop"),
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
    )


def encode_embedding_request(model: str, texts: Sequence[str]) -> bytes:
    return _dumps({"model": model, "input": list(texts)})


def decode_embedding_request(body: bytes) -> tuple[str, list[str]]:
    obj = _loads(body)
    try:
        texts = obj["input"]
        return obj["model"], [texts] if isinstance(texts, str) else list(texts)
    except (KeyError, TypeError) as exc:
        raise BadResponse(f"malformed embedding request: {exc!r}") from None


def encode_embedding_response(model: str, vectors: Sequence[Sequence[float]], prompt_tokens: int = 0) -> bytes:
    return _dumps(
        {
            "object": "list",
            "data": [
                {"object": "embedding", "index": i, "embedding": [float(x) for x in v]}
                for i, v in enumerate(vectors)
            ],
            "model": model,
            "usage": {"prompt_tokens": prompt_tokens, "total_tokens": prompt_tokens},
        }
    )


@dataclass(frozen=True)
class EmbeddingBatch:
    """Parsed ``/embeddings`` response body."""

    model: str
    vectors: list
    prompt_tokens: int = 0


def parse_embedding_response(body: bytes) -> EmbeddingBatch:
    obj = _loads(body)
    try:
        items = sorted(obj["data"], key=lambda d: d["index"])
        vectors = [[float(x) for x in d["embedding"]] for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse(f"malformed embedding response: {exc!r}") from None
    if len({len(v) for v in vectors}) > 1:
        raise BadResponse("embedding response mixes dimensionalities")
    usage = obj.get("usage") or {}
    return EmbeddingBatch(str(obj.get("model", "")), vectors, int(usage.get("prompt_tokens", 0)))


def decode_embedding_response(body: bytes) -> list[list[float]]:
    return parse_embedding_response(body).vectors


# ---------------------------------------------------------------------------
# Embeddings


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0:
        return np.zeros_like(v)
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, defined as 0 when either vector is zero.

    Uses ``dot / sqrt(|a|^2 |b|^2)`` so that ``cosine(v, v)`` is exactly 1.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        return 0.0
    den = float(np.sqrt(aa * bb))
    if den == 0.0 or not np.isfinite(den):  # product under/overflowed
        den = float(np.sqrt(aa)) * float(np.sqrt(bb))
    value = float(np.dot(a, b)) / den
    return min(1.0, max(-1.0, value))


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class HashEmbedding:
    """Signed feature hashing of lowercase alphanumeric tokens.

    Each token hashes (blake2b, keyed by ``seed``) to a bucket in ``[0, dim)``
    and a sign; bucket counts are L2-normalised. No tokens gives the zero
    vector.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    @property
    def backend_id(self) -> str:
        return f"hash-{self.dim}-seed{self.seed}"

    def _slot(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest(), "little")
        return (h >> 1) % self.dim, (1.0 if h & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text or ""):
            idx, sign = self._slot(tok)
            vec[idx] += sign
        return l2_normalize(vec)

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class HttpEmbedding:
    """Embeddings from an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, base_url: str | None = None, model: str = "text-embedding", api_key: str | None = None,
                 transport: "_HttpTransport | None" = None, **transport_kwargs):
        self.model = model
        self._http = transport or _HttpTransport(base_url, api_key, **transport_kwargs)
        self.dim: int | None = None

    @property
    def backend_id(self) -> str:
        return f"http-embed:{self.model}"

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        body = self._http.post("/embeddings", encode_embedding_request(self.model, texts))
        vectors = decode_embedding_response(body)
        if len(vectors) != len(texts):
            raise BadResponse(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        dim = len(vectors[0])
        if self.dim is None:
            self.dim = dim
        elif dim != self.dim:
            raise DimensionMismatch(f"endpoint switched dimensionality {self.dim} -> {dim}")
        return [l2_normalize(np.asarray(v)) if t.strip() else np.zeros(dim) for v, t in zip(vectors, texts)]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def embed_text(backend, text: str) -> np.ndarray:
    return backend.embed(text)


# ---------------------------------------------------------------------------
# Chat


@dataclass(frozen=True)
class MockRule:
    match: str
    response: str
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.match, prompt) is not None
        return self.match in prompt


class ScriptedChat:
    """Deterministic chat mock: first rule matching the user prompt wins.

    Rules match on a substring (default) or a regex of the user prompt; when
    nothing matches, ``default`` is returned.
    """

    def __init__(self, rules: Sequence[MockRule] = (), default: str = "", name: str = "mock"):
        self.rules = tuple(rules)
        self.default = default
        self.name = name
        for r in self.rules:
            if r.regex:
                re.compile(r.match)

    @property
    def backend_id(self) -> str:
        return f"mock:{self.name}"

    @classmethod
    def from_spec(cls, spec, name: str = "mock") -> "ScriptedChat":
        """Build from a rule list ``[{match, response, regex?}]`` or ``{rules, default}``."""
        if isinstance(spec, list):
            spec = {"rules": spec}
        rules = [MockRule(r["match"], r["response"], bool(r.get("regex", False))) for r in spec.get("rules", [])]
        return cls(rules, spec.get("default", ""), name=spec.get("name", name))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChat":
        with open(path, encoding="utf-8") as fh:
            return cls.from_spec(json.load(fh), name=Path(path).stem)

    def respond(self, prompt: str) -> str:
        for rule in self.rules:
            if rule.matches(prompt):
                return rule.response
        return self.default

    def complete(self, req: ChatRequest) -> ChatResponse:
        t0 = time.perf_counter()
        text = self.respond(req.user_prompt)
        return ChatResponse(text=text, latency=time.perf_counter() - t0, backend_id=self.backend_id)


class _HttpTransport:
    """POST helper with bearer auth, bounded in-flight requests and retries.

    Retries HTTP 429/5xx and connection errors with exponential backoff and
    full jitter: retry ``r`` (1-based) first sleeps ``uniform(0, base * factor**(r - 1))``.
    ``retries`` counts total attempts.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None, *, retries: int = 3,
                 base_delay: float = 0.5, factor: float = 4.0, inflight: int = 8, timeout: float = 60.0,
                 sleep: Callable[[float], None] = time.sleep, rng: random.Random | None = None,
                 client: httpx.Client | None = None):
        base_url = base_url or os.environ.get(ENV_BASE)
        if not base_url:
            raise ValueError(f"no base_url given and {ENV_BASE} is unset")
        if retries < 1:
            raise ValueError("retries counts total attempts and must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.retries = retries
        self.base_delay = base_delay
        self.factor = factor
        self.timeout = timeout
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._gate = threading.BoundedSemaphore(inflight)
        self._client = client or httpx.Client(timeout=timeout)
        self.attempts_made = 0

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def post(self, path: str, body: bytes) -> bytes:
        url = self.base_url + path
        last = "no attempt made"
        for attempt in range(self.retries):
            if attempt:
                self._sleep(self._rng.uniform(0.0, self.base_delay * self.factor ** (attempt - 1)))
            self.attempts_made += 1
            try:
                with self._gate:
                    resp = self._client.post(url, content=body, headers=self._headers())
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("POST %s attempt %d/%d failed: %s", url, attempt + 1, self.retries, last)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("POST %s attempt %d/%d got %s", url, attempt + 1, self.retries, last)
                continue
            if resp.status_code >= 400:
                raise BadResponse(f"POST {url} returned HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.content
        raise BackendUnavailable(f"POST {url} failed after {self.retries} attempts ({last})")


class HttpChat:
    """Live OpenAI-compatible chat-completions backend."""

    def __init__(self, base_url: str | None = None, model: str = "default", api_key: str | None = None,
                 transport: _HttpTransport | None = None, **transport_kwargs):
        self.model = model
        self._http = transport or _HttpTransport(base_url, api_key, **transport_kwargs)

    @property
    def backend_id(self) -> str:
        return f"http:{self.model}"

    def complete(self, req: ChatRequest) -> ChatResponse:
        t0 = time.perf_counter()
        body = self._http.post("/chat/completions", encode_chat_request(self.model, req))
        completion = decode_chat_response(body)
        return ChatResponse(text=completion.content, latency=time.perf_counter() - t0, backend_id=self.backend_id)


def chat_complete(backend, req: ChatRequest) -> ChatResponse:
    return backend.complete(req)
