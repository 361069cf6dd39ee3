"""Knowledge base, exact cosine top-k retrieval and reasoning-context assembly."""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateDocId, EmptyIndex, InputError
from .backends import cosine

KINDS = ("case", "guideline")
DEFAULT_K = 10
DEFAULT_BUDGET = 8000

INDEX_MAGIC = b"MAPVIDX\x00"
INDEX_VERSION = 1
DOC_ID_WIDTH = 64
_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    kind: str
    text: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.doc_id:
            raise InputError("doc_id is empty")
        if self.kind not in KINDS:
            raise InputError(f"{self.doc_id}: kind must be one of {KINDS}, got {self.kind!r}")
        if not self.text or not self.text.strip():
            raise InputError(f"{self.doc_id}: text is empty")

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "kind": self.kind, "text": self.text, "metadata": dict(self.metadata)}

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeDoc":
        try:
            return cls(d["doc_id"], d["kind"], d["text"], {str(k): str(v) for k, v in (d.get("metadata") or {}).items()})
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed knowledge doc: {exc!r}") from None


@dataclass(frozen=True)
class Hit:
    doc: KnowledgeDoc
    score: float


@dataclass(frozen=True)
class RetrievedSet:
    hits: tuple[Hit, ...]
    k: int

    def summary(self) -> list[dict]:
        return [{"doc_id": h.doc.doc_id, "kind": h.doc.kind, "score": h.score} for h in self.hits]


class VectorIndex:
    """Immutable dense index; vectors are unit-norm or zero."""

    def __init__(self, docs: Sequence[KnowledgeDoc], vectors: np.ndarray, embedder_id: str = ""):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(docs):
            raise DimensionMismatch(f"expected {len(docs)} vectors, got array of shape {vectors.shape}")
        seen = set()
        for d in docs:
            if d.doc_id in seen:
                raise DuplicateDocId(f"duplicate doc_id {d.doc_id!r}")
            seen.add(d.doc_id)
        self.docs = tuple(docs)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.embedder_id = embedder_id

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.docs)

    def similarities(self, query_vec: np.ndarray) -> list[float]:
        if len(query_vec) != self.dims:
            raise DimensionMismatch(f"query has {len(query_vec)} dims, index has {self.dims}")
        return [cosine(v, query_vec) for v in self.vectors]


def load_docs(directory: str | Path) -> list[KnowledgeDoc]:
    """Read one JSON document per ``*.json`` file, in filename order."""
    paths = sorted(Path(directory).glob("*.json"))
    docs = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            try:
                docs.append(KnowledgeDoc.from_dict(json.load(fh)))
            except json.JSONDecodeError as exc:
                raise InputError(f"{p}: {exc}") from None
    return docs


def write_docs(directory: str | Path, docs: Iterable[KnowledgeDoc]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for d in docs:
        (directory / f"{d.doc_id}.json").write_text(json.dumps(d.to_dict(), ensure_ascii=False, indent=1) + "\n",
                                                    encoding="utf-8")


def index_documents(docs: Sequence[KnowledgeDoc], embedder) -> VectorIndex:
    if not docs:
        raise EmptyIndex("no documents to index")
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DuplicateDocId(f"duplicate doc_id {dup!r}")
    vecs = [embedder.embed(d.text) for d in docs]
    if len({len(v) for v in vecs}) != 1:
        raise DimensionMismatch("embedder returned vectors of differing dimensionality")
    return VectorIndex(docs, np.vstack(vecs), getattr(embedder, "backend_id", ""))


def retrieve(index: VectorIndex, query_text: str, embedder, k: int = DEFAULT_K) -> RetrievedSet:
    """Exact top-k by cosine; ties broken by ascending doc_id."""
    if len(index) == 0:
        raise EmptyIndex("index is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = index.similarities(embedder.embed(query_text))
    best = heapq.nsmallest(k, range(len(index)), key=lambda i: (-sims[i], index.docs[i].doc_id))
    return RetrievedSet(tuple(Hit(index.docs[i], sims[i]) for i in best), k)


# ---------------------------------------------------------------------------
# Rerankers: callables taking and returning a list of hits.

Reranker = Callable[[list[Hit]], list[Hit]]


def identity_reranker(hits: list[Hit]) -> list[Hit]:
    return list(hits)


@dataclass(frozen=True)
class FilterReranker:
    """Keep hits whose doc ``kind`` (or a metadata key) equals ``value``."""

    value: str
    key: str = "kind"

    def __call__(self, hits):
        if self.key == "kind":
            return [h for h in hits if h.doc.kind == self.value]
        return [h for h in hits if h.doc.metadata.get(self.key) == self.value]


@dataclass(frozen=True)
class ScoreThresholdReranker:
    min_score: float

    def __call__(self, hits):
        return [h for h in hits if h.score >= self.min_score]


def rerank(hits: RetrievedSet, reranker: Reranker | None = None) -> RetrievedSet:
    reranker = reranker or identity_reranker
    return RetrievedSet(tuple(reranker(list(hits.hits))), hits.k)


def make_reranker(name: str, **kwargs) -> Reranker:
    if name == "identity":
        return identity_reranker
    if name == "filter":
        return FilterReranker(**kwargs)
    if name == "threshold":
        return ScoreThresholdReranker(**kwargs)
    raise ValueError(f"unknown reranker {name!r}")


# ---------------------------------------------------------------------------
# Context assembly

REASONING_INSTRUCTIONS = """REASONING INSTRUCTIONS
1. Summarise the key findings of the radiology report and the reviewed medical history.
2. Compare the patient with the similar cases above; note which are clinically relevant and which only look similar.
3. Check the candidate diagnoses against the guidelines above.
4. Reason step by step to a single final diagnosis category.
5. Cite the supporting evidence (report findings, history items, case or guideline ids) for that diagnosis."""


def _render_hit(h: Hit) -> str:
    return f"[{h.doc.doc_id}] (score {h.score:.4f})\n{h.doc.text.strip()}"


def _render(hits: Sequence[Hit]) -> str:
    parts = []
    cases = [h for h in hits if h.doc.kind == "case"]
    guidelines = [h for h in hits if h.doc.kind == "guideline"]
    if cases:
        parts.append("SIMILAR CASES\n" + "\n\n".join(_render_hit(h) for h in cases))
    if guidelines:
        parts.append("GUIDELINES\n" + "\n\n".join(_render_hit(h) for h in guidelines))
    parts.append(REASONING_INSTRUCTIONS)
    return "\n\n".join(parts)


def assemble_cot_context(case, hits: RetrievedSet | Sequence[Hit], budget: int = DEFAULT_BUDGET) -> str:
    """Render retrieved documents plus a fixed reasoning scaffold.

    Hits that are the case itself (same doc_id or ``metadata['case_id']``)
    are skipped. When the text exceeds ``budget`` characters, whole hits are
    dropped from the lowest-ranked end.
    """
    seq = list(hits.hits if isinstance(hits, RetrievedSet) else hits)
    if case is not None:
        cid = case.case_id
        seq = [h for h in seq if h.doc.doc_id != cid and h.doc.metadata.get("case_id") != cid]
    text = _render(seq)
    while len(text) > budget and seq:
        seq.pop()
        text = _render(seq)
    return text


# ---------------------------------------------------------------------------
# Binary index file: header (magic, version, dims, count), then `count`
# fixed-width records (doc_id padded to 64 bytes, dims float64 LE), then a
# length-prefixed JSON trailer with the documents and embedder id.


def save_index(index: VectorIndex, path: str | Path) -> None:
    out = bytearray(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dims, len(index)))
    for doc, vec in zip(index.docs, index.vectors):
        raw = doc.doc_id.encode("utf-8")
        if len(raw) > DOC_ID_WIDTH:
            raise InputError(f"doc_id longer than {DOC_ID_WIDTH} bytes: {doc.doc_id!r}")
        out += raw.ljust(DOC_ID_WIDTH, b"\x00")
        out += np.asarray(vec, dtype="<f8").tobytes()
    trailer = json.dumps({"embedder": index.embedder_id, "docs": [d.to_dict() for d in index.docs]},
                         ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<Q", len(trailer)) + trailer
    Path(path).write_bytes(bytes(out))


def load_index(path: str | Path) -> VectorIndex:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InputError(f"{path}: truncated index header")
    magic, version, dims, count = _HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise InputError(f"{path}: not an index file (bad magic)")
    if version != INDEX_VERSION:
        raise InputError(f"{path}: unsupported index version {version}")
    rec = DOC_ID_WIDTH + 8 * dims
    off = _HEADER.size
    end = off + rec * count
    if len(data) < end + 8:
        raise InputError(f"{path}: truncated index records")
    ids, vecs = [], np.empty((count, dims), dtype=np.float64)
    for i in range(count):
        base = off + i * rec
        ids.append(data[base:base + DOC_ID_WIDTH].rstrip(b"\x00").decode("utf-8"))
        vecs[i] = np.frombuffer(data, dtype="<f8", count=dims, offset=base + DOC_ID_WIDTH)
    (tlen,) = struct.unpack_from("<Q", data, end)
    trailer = json.loads(data[end + 8:end + 8 + tlen].decode("utf-8"))
    docs = [KnowledgeDoc.from_dict(d) for d in trailer["docs"]]
    if [d.doc_id for d in docs] != ids:
        raise InputError(f"{path}: record ids do not match trailer documents")
    return VectorIndex(docs, vecs, trailer.get("embedder", ""))
