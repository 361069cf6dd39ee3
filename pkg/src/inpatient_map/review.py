"""Relevance filtering of medical history against the radiology report.

History entities are embedded and compared with every report segment; the
resulting entity x segment cosine matrix gives each entity an importance
score, and entities scoring below the threshold are dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import cosine

DEFAULT_THRESHOLD = 0.1
_SEGMENT_RE = re.compile(r"[^.!?;\n]+")


@dataclass(frozen=True)
class Entity:
    text: str
    position: int


@dataclass(frozen=True)
class CorrelationMatrix:
    entities: tuple[Entity, ...]
    segments: tuple[str, ...]
    values: np.ndarray  # shape (len(entities), len(segments))

    def __post_init__(self):
        if self.values.shape != (len(self.entities), len(self.segments)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.entities)} entities x {len(self.segments)} segments"
            )


@dataclass(frozen=True)
class ReviewResult:
    retained: tuple[Entity, ...]
    dropped: tuple[tuple[Entity, float], ...]
    scores: tuple[float, ...]
    filtered_history: str
    threshold: float = DEFAULT_THRESHOLD
    score_mode: str = "max"

    def to_dict(self) -> dict:
        return {
            "status": "ENABLED",
            "threshold": self.threshold,
            "score_mode": self.score_mode,
            "retained": [e.text for e in self.retained],
            "dropped": [{"text": e.text, "score": s} for e, s in self.dropped],
            "scores": list(self.scores),
            "filtered_history": self.filtered_history,
        }


def _spans(text: str) -> list[tuple[str, int]]:
    out = []
    for m in _SEGMENT_RE.finditer(text or ""):
        raw = m.group(0)
        stripped = raw.strip()
        if stripped:
            out.append((stripped, m.start() + (len(raw) - len(raw.lstrip()))))
    return out


def segment(text: str) -> list[str]:
    """Split on ``. ! ? ;`` and newlines, trimming and dropping empty spans."""
    return [s for s, _ in _spans(text)]


def load_lexicon(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def extract_entities(history: str, lexicon: Sequence[str] | None = None) -> list[Entity]:
    """Sentence-level entities, optionally refined by lexicon terms.

    With a lexicon, every term occurrence inside a sentence becomes its own
    entity and the leftover fragments of that sentence stay as entities, so
    spans never overlap.
    """
    sentences = _spans(history)
    if not lexicon:
        return [Entity(s, pos) for s, pos in sentences]
    terms = sorted({t for t in lexicon if t}, key=len, reverse=True)
    pattern = re.compile(r"(?<!\w)(" + "|".join(re.escape(t) for t in terms) + r")(?!\w)", re.IGNORECASE)
    entities = []
    for sent, pos in sentences:
        cursor = 0
        for m in pattern.finditer(sent):
            entities.extend(_fragment(sent[cursor:m.start()], pos + cursor))
            entities.append(Entity(m.group(0), pos + m.start()))
            cursor = m.end()
        entities.extend(_fragment(sent[cursor:], pos + cursor))
    return entities


def _fragment(raw: str, pos: int) -> list[Entity]:
    stripped = raw.strip(" \t,:-/()")
    if not any(ch.isalnum() for ch in stripped):
        return []
    return [Entity(stripped, pos + raw.index(stripped))]


def build_correlation_matrix(entities: Sequence[Entity], report_segments: Sequence[str], embedder,
                             overall_report: str | None = None) -> CorrelationMatrix:
    """Cosine similarity of every entity against every report segment.

    ``overall_report``, when given, is appended as one extra column holding
    the whole report text.
    """
    columns = list(report_segments)
    if overall_report is not None:
        columns.append(overall_report)
    ent_vecs = [embedder.embed(e.text) for e in entities]
    seg_vecs = [embedder.embed(s) for s in columns]
    values = np.zeros((len(ent_vecs), len(seg_vecs)), dtype=np.float64)
    for i, ev in enumerate(ent_vecs):
        for j, sv in enumerate(seg_vecs):
            values[i, j] = cosine(ev, sv)
    return CorrelationMatrix(tuple(entities), tuple(columns), values)


def entity_scores(matrix: CorrelationMatrix, score: str = "max") -> np.ndarray:
    values = matrix.values
    if values.shape[1] == 0:
        return np.zeros(values.shape[0])
    if score == "max":
        return values.max(axis=1)
    if score == "mean":
        return values.mean(axis=1)
    raise ValueError(f"unknown score mode {score!r}; expected 'max' or 'mean'")


def score_and_filter(matrix: CorrelationMatrix, threshold: float = DEFAULT_THRESHOLD,
                     score: str = "max") -> ReviewResult:
    scores = entity_scores(matrix, score)
    retained, dropped = [], []
    for ent, s in zip(matrix.entities, scores):
        if s >= threshold:
            retained.append(ent)
        else:
            dropped.append((ent, float(s)))
    return ReviewResult(
        retained=tuple(retained),
        dropped=tuple(dropped),
        scores=tuple(float(s) for s in scores),
        filtered_history=". ".join(e.text for e in retained),
        threshold=threshold,
        score_mode=score,
    )


@dataclass
class RecordReviewer:
    embedder: object
    threshold: float = DEFAULT_THRESHOLD
    score: str = "max"
    lexicon: list[str] = field(default_factory=list)
    overall_column: bool = False

    def review(self, history: str, report: str) -> ReviewResult:
        entities = extract_entities(history, self.lexicon)
        matrix = build_correlation_matrix(
            entities, segment(report), self.embedder,
            overall_report=report if self.overall_column else None,
        )
        return score_and_filter(matrix, self.threshold, self.score)
