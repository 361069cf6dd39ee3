import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inpatient_map.backends import HashEmbedding
from inpatient_map.errors import DuplicateDocId, EmptyIndex, InputError
from inpatient_map.retrieval import (FilterReranker, Hit, KnowledgeDoc, RetrievedSet, ScoreThresholdReranker,
                                     VectorIndex, assemble_cot_context, identity_reranker, index_documents,
                                     load_docs, load_index, make_reranker, rerank, retrieve, save_index,
                                     write_docs)
from inpatient_map.synthetic import make_cases

from oracles import full_sort_topk

EMB = HashEmbedding(256, 0)
WORDS = "lung nodule mass effusion fracture cardiac renal liver bowel sepsis stroke infarct fever cough".split()


def random_docs(rng, n):
    return [KnowledgeDoc(f"doc-{i:04d}", rng.choice(["case", "guideline"]),
                         " ".join(rng.choices(WORDS, k=rng.randint(1, 8)))) for i in range(n)]


def test_index_examples():
    docs = [KnowledgeDoc("a", "case", "lung nodule"), KnowledgeDoc("b", "guideline", "renal"),
            KnowledgeDoc("c", "case", "fever")]
    index = index_documents(docs, EMB)
    assert len(index) == 3
    assert np.array_equal(index.vectors, index_documents(docs, EMB).vectors)
    with pytest.raises(DuplicateDocId):
        index_documents(docs + [KnowledgeDoc("a", "case", "x")], EMB)
    with pytest.raises(EmptyIndex):
        index_documents([], EMB)


def test_invalid_kind_rejected():
    with pytest.raises(InputError):
        KnowledgeDoc("x", "note", "text")


def test_exact_text_query_ranks_first_with_score_one():
    docs = random_docs(random.Random(1), 30) + [KnowledgeDoc("target", "case", "sepsis with renal failure")]
    hits = retrieve(index_documents(docs, EMB), "sepsis with renal failure", EMB, k=3)
    assert hits.hits[0].doc.doc_id == "target"
    assert hits.hits[0].score == 1.0


def test_k_larger_than_index_returns_all():
    docs = random_docs(random.Random(2), 7)
    assert len(retrieve(index_documents(docs, EMB), "lung", EMB, k=50).hits) == 7


@given(st.integers(0, 2**32), st.integers(1, 120), st.integers(1, 130))
def test_retrieve_matches_full_sort(seed, n, k):
    rng = random.Random(seed)
    docs = random_docs(rng, n)
    index = index_documents(docs, EMB)
    query = " ".join(rng.choices(WORDS, k=3))
    hits = retrieve(index, query, EMB, k)
    sims = index.similarities(EMB.embed(query))
    assert [h.doc.doc_id for h in hits.hits] == full_sort_topk(sims, [d.doc_id for d in docs], k)
    scores = [h.score for h in hits.hits]
    assert scores == sorted(scores, reverse=True)


def test_ties_break_by_doc_id():
    docs = [KnowledgeDoc(i, "case", "same text") for i in ("z", "b", "m", "a")]
    hits = retrieve(index_documents(docs, EMB), "same text", EMB, k=3)
    assert [h.doc.doc_id for h in hits.hits] == ["a", "b", "m"]


def test_rerankers():
    docs = random_docs(random.Random(3), 40)
    hits = retrieve(index_documents(docs, EMB), "lung nodule cough", EMB, k=20)
    assert rerank(hits, identity_reranker) == hits
    kept = rerank(hits, FilterReranker("guideline")).hits
    assert all(h.doc.kind == "guideline" for h in kept)
    assert [h.doc.doc_id for h in kept] == [h.doc.doc_id for h in hits.hits if h.doc.kind == "guideline"]
    thr = rerank(hits, ScoreThresholdReranker(0.05)).hits
    assert all(h in hits.hits for h in thr) and all(h.score >= 0.05 for h in thr)
    assert [h.score for h in thr] == sorted((h.score for h in thr), reverse=True)
    assert make_reranker("threshold", min_score=0.2)(list(hits.hits)) == [h for h in hits.hits if h.score >= 0.2]
    with pytest.raises(ValueError):
        make_reranker("learned")


def test_context_sections():
    assert assemble_cot_context(None, []).startswith("REASONING INSTRUCTIONS")
    hits = [Hit(KnowledgeDoc("c1", "case", "case one"), 0.9), Hit(KnowledgeDoc("g1", "guideline", "rule"), 0.8),
            Hit(KnowledgeDoc("c2", "case", "case two"), 0.7)]
    text = assemble_cot_context(None, hits)
    assert text.index("SIMILAR CASES") < text.index("GUIDELINES") < text.index("REASONING INSTRUCTIONS")
    assert "[c1] (score 0.9000)" in text and "[c2] (score 0.7000)" in text
    assert text == assemble_cot_context(None, hits)


def test_context_skips_self_and_respects_budget():
    case = make_cases(1, seed=0)[0]
    hits = [Hit(KnowledgeDoc("x", "case", "itself", {"case_id": case.case_id}), 1.0)]
    hits += [Hit(KnowledgeDoc(f"d{i}", "case", "word " * 50), 0.5 - i / 100) for i in range(10)]
    text = assemble_cot_context(case, RetrievedSet(tuple(hits), 11), budget=1000)
    assert "[x]" not in text
    assert len(text) <= 1000
    assert "[d0]" in text and "[d9]" not in text


def test_index_file_round_trip_and_stable_bytes(tmp_path):
    docs = random_docs(random.Random(4), 20)
    write_docs(tmp_path / "kb", docs)
    assert load_docs(tmp_path / "kb") == docs
    index = index_documents(load_docs(tmp_path / "kb"), EMB)
    save_index(index, tmp_path / "a.idx")
    save_index(index_documents(docs, EMB), tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()
    back = load_index(tmp_path / "a.idx")
    assert back.docs == index.docs and np.array_equal(back.vectors, index.vectors)
    assert back.embedder_id == EMB.backend_id


def test_corrupt_index_rejected(tmp_path):
    (tmp_path / "bad.idx").write_bytes(b"NOTANIDX" + bytes(40))
    with pytest.raises(InputError):
        load_index(tmp_path / "bad.idx")


def test_dimension_mismatch():
    index = VectorIndex([KnowledgeDoc("a", "case", "x")], np.ones((1, 4)))
    with pytest.raises(InputError):
        retrieve(index, "lung", EMB, 1)
