import hashlib
import math
import re
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inpatient_map.backends import HashEmbedding
from inpatient_map.review import (CorrelationMatrix, Entity, RecordReviewer, build_correlation_matrix,
                                  extract_entities, score_and_filter, segment)

EMB = HashEmbedding(256, 0)
REPORT = ("Multiple pulmonary nodules in both lungs. Lung abnormalities are concerning for metastatic disease. "
          "No pleural effusion.")
HISTORY = "pulmonary nodules followed by imaging. remote appendectomy. hypertension"


def sparse_hash_vector(text, dim=256, seed=0):
    """Dict-of-buckets reimplementation of the hashing embedding (unnormalised)."""
    key = seed.to_bytes(8, "little", signed=True)
    vec = Counter()
    for tok in re.findall(r"[0-9a-z]+", text.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, key=key).digest(), "little")
        vec[(h >> 1) % dim] += 1 if h & 1 else -1
    return vec


def sparse_cosine(a, b):
    dot = sum(v * b.get(k, 0) for k, v in a.items())
    na = sum(v * v for v in a.values())
    nb = sum(v * v for v in b.values())
    return 0.0 if na == 0 or nb == 0 else dot / math.sqrt(na * nb)


def _matrix(values):
    values = np.asarray(values, dtype=float)
    ents = tuple(Entity(f"e{i}", i) for i in range(values.shape[0]))
    return CorrelationMatrix(ents, tuple(f"s{j}" for j in range(values.shape[1])), values)


def test_segment_examples():
    assert segment("HTN. Afib; on warfarin") == ["HTN", "Afib", "on warfarin"]
    assert segment("") == []
    assert segment("one sentence") == ["one sentence"]


def test_correlation_matrix_shape_identity_and_zero_row():
    ents = [Entity("lung nodule stable", 0), Entity("...", 20)]
    m = build_correlation_matrix(ents, ["lung nodule stable", "no effusion", "heart normal"], EMB)
    assert m.values.shape == (2, 3)
    assert m.values[0, 0] == 1.0
    assert not m.values[1].any()


def test_pulmonary_nodule_history_retained_with_oracle_score():
    result = RecordReviewer(EMB).review(HISTORY, REPORT)
    ent = sparse_hash_vector("pulmonary nodules followed by imaging")
    oracle = max(sparse_cosine(ent, sparse_hash_vector(s)) for s in segment(REPORT))
    assert oracle == pytest.approx(3 / math.sqrt(30), abs=1e-12)  # one bucket collision adds a shared +1
    assert result.scores[0] == pytest.approx(oracle, abs=1e-12)
    assert result.scores[0] >= 0.1
    assert result.filtered_history == "pulmonary nodules followed by imaging"


def test_row_max_below_threshold_dropped():
    r = score_and_filter(_matrix([[0.09, 0.02], [0.3, 0.0]]), threshold=0.1)
    assert [e.text for e in r.retained] == ["e1"]
    assert r.dropped[0][0].text == "e0" and r.dropped[0][1] == 0.09


def test_retention_is_inclusive_at_threshold():
    r = score_and_filter(_matrix([[0.1, 0.0]]), threshold=0.1)
    assert [e.text for e in r.retained] == ["e0"]


def test_threshold_zero_keeps_nonnegative_scores():
    r = score_and_filter(_matrix([[0.0, 0.0], [0.5, 0.2]]), threshold=0.0)
    assert len(r.retained) == 2


def test_mean_score_mode():
    r = score_and_filter(_matrix([[0.3, 0.0]]), threshold=0.2, score="mean")
    assert r.retained == ()
    assert r.scores == (0.15,)


@given(st.lists(st.lists(st.floats(-1, 1), min_size=1, max_size=4), min_size=1, max_size=6), st.data())
def test_threshold_monotonicity(rows, data):
    width = len(rows[0])
    rows = [(r * width)[:width] for r in rows]
    lo = data.draw(st.floats(-1, 1))
    hi = data.draw(st.floats(lo, 1))
    m = _matrix(rows)
    kept_hi = {e.position for e in score_and_filter(m, hi).retained}
    kept_lo = {e.position for e in score_and_filter(m, lo).retained}
    assert kept_hi <= kept_lo


def test_lexicon_entities_do_not_overlap():
    ents = extract_entities("History of HTN and type 2 diabetes, on insulin.", ["HTN", "type 2 diabetes"])
    texts = [e.text for e in ents]
    assert "HTN" in texts and "type 2 diabetes" in texts
    spans = sorted((e.position, e.position + len(e.text)) for e in ents)
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


def test_overall_report_column():
    r = RecordReviewer(EMB, overall_column=True).review("hypertension", "No acute process. Stable.")
    assert len(r.scores) == 1


@given(st.text(alphabet="abc .;\n", max_size=80))
def test_entities_are_ordered_substrings(history):
    for e in extract_entities(history):
        assert history[e.position:e.position + len(e.text)] == e.text
