"""Acceptance gate: eight end-to-end criteria, each reported as one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines appear in the
terminal summary under "acceptance criteria".
"""

import difflib
import filecmp
import json
import random
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from fakes import FakeServer
from inpatient_map.agents import build_pathway, run_batch
from inpatient_map.backends import (ChatCompletion, ChatRequest, HashEmbedding, HttpChat, ScriptedChat,
                                    decode_chat_request, decode_chat_response, decode_embedding_request,
                                    encode_chat_request, encode_chat_response, encode_embedding_request,
                                    encode_embedding_response, parse_embedding_response)
from inpatient_map.config import RunConfig
from inpatient_map.ingest import build_dataset, load_source_tables
from inpatient_map.metrics import (DSMR_VARIANTS, ConfusionMatrix, basic_metrics, classify_icc, cohens_kappa,
                                   dsmr, icc_2k, mcc)
from inpatient_map.retrieval import KnowledgeDoc, index_documents, retrieve
from inpatient_map.review import (CorrelationMatrix, Entity, RecordReviewer, build_correlation_matrix,
                                  score_and_filter, segment)
from inpatient_map.cases import read_cases
from inpatient_map.synthetic import make_cases, make_knowledge_base, make_scripted_corpus, write_mimic_fixture
from inpatient_map.taxonomy import TASKS, by_code

RESULTS: dict[int, str] = {}
WIRE = Path(__file__).parent / "fixtures" / "wire"


class Gate:
    """Collects failed checks for one criterion, then records a single PASS/FAIL line."""

    def __init__(self, number, title):
        self.number, self.title, self.failures = number, title, []

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)

    def finish(self, detail=""):
        status = "PASS" if not self.failures else "FAIL"
        note = detail if not self.failures else "; ".join(self.failures[:3])
        RESULTS[self.number] = f"[{status}] criterion {self.number}: {self.title}" + (f" ({note})" if note else "")
        assert not self.failures, RESULTS[self.number]


# ---------------------------------------------------------------------------


def random_confusion(rng):
    n = int(rng.integers(2, 18))
    total = int(rng.integers(1, 501))
    # skewed towards the diagonal so matrices look like classifier output
    probs = rng.dirichlet(np.ones(n * n + n))
    diag_boost = np.zeros(n * n + n)
    diag_boost[[i * n + i for i in range(n)]] = rng.uniform(0, 3)
    probs = (probs + diag_boost / n) / (probs + diag_boost / n).sum()
    flat = rng.multinomial(total, probs)
    return flat[: n * n].reshape(n, n), flat[n * n:]


def test_criterion_1_metrics_oracles():
    gate = Gate(1, "kappa, MCC, macro metrics and DSMR variants match oracles on 100 random matrices")
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        counts, pf = random_confusion(rng)
        n = len(counts)
        cm = ConfusionMatrix(tuple(f"C{i}" for i in range(n)), counts, pf)
        samples = oracles.expand(counts, pf)
        b = basic_metrics(cm)
        ref = oracles.macro(samples, n)
        pairs = [(getattr(b, key), ref[key], key) for key in ref]
        pairs += [(cohens_kappa(cm), oracles.kappa(samples, n), "kappa"), (mcc(cm), oracles.mcc(samples, n), "mcc")]
        for variant in DSMR_VARIANTS:
            got = dsmr(cm, variant)["rates"]
            want = oracles.dsmr(samples, n, variant)
            gate.check(set(got) == {f"C{c}" for c in want}, f"trial {trial}: DSMR class set differs")
            pairs += [(got[f"C{c}"], v, f"dsmr:{variant}") for c, v in want.items()]
        for got, want, name in pairs:
            err = abs(got - want)
            worst = max(worst, err)
            gate.check(err <= 1e-9, f"trial {trial} {name}: {got} vs {want}")
    elapsed = time.perf_counter() - t0
    gate.check(elapsed < 5.0, f"took {elapsed:.2f}s")
    gate.finish(f"max abs err {worst:.1e}, {elapsed:.2f}s")


def test_criterion_2_icc():
    gate = Gate(2, "ICC(2,k) matches ANOVA oracle, bands exact, worked example 10/13")
    rng = np.random.default_rng(7)
    worst, done = 0.0, 0
    while done < 100:
        n, k = int(rng.integers(2, 11)), int(rng.integers(2, 6))
        y = np.round(rng.normal(3, 1.5, size=(n, k)) + rng.normal(0, 2, size=(n, 1)), 2)
        _, _, _, want = oracles.icc_anova(y.tolist())
        if not np.isfinite(want):
            continue
        err = abs(icc_2k(y).value - want)
        worst = max(worst, err)
        gate.check(err <= 1e-9, f"{n}x{k}: {icc_2k(y).value} vs {want}")
        done += 1
    bands = {0.0: "Poor", 0.3999999999: "Poor", 0.40: "Fair", 0.5999999999: "Fair", 0.60: "Good",
             0.7499999999: "Good", 0.75: "Excellent", 1.0: "Excellent"}
    for value, name in bands.items():
        gate.check(classify_icc(value) == name, f"classify_icc({value}) = {classify_icc(value)}, want {name}")
    ex = icc_2k([[1, 2], [2, 3], [3, 4], [4, 5]])
    gate.check(abs(ex.value - 10 / 13) <= 1e-12, f"worked example gave {ex.value}")
    gate.finish(f"max abs err {worst:.1e}; worked example {ex.value:.12f}")


VOCAB = [f"w{i}" for i in range(60)] + "lung nodule mass effusion fracture cardiac renal sepsis".split()


def test_criterion_3_retrieval_exactness():
    gate = Gate(3, "retrieve(k) equals full-sort oracle on 50 random indexes; ties by doc_id")
    rng = random.Random(99)
    emb = HashEmbedding(256, 0)
    for trial in range(50):
        size = rng.randint(1, 1000)
        ids = [f"d{rng.randrange(10**6):06d}-{i}" for i in range(size)]
        docs = [KnowledgeDoc(i, rng.choice(["case", "guideline"]), " ".join(rng.choices(VOCAB, k=rng.randint(1, 6))))
                for i in ids]
        index = index_documents(docs, emb)
        query = " ".join(rng.choices(VOCAB, k=3))
        sims = index.similarities(emb.embed(query))
        for k in sorted({1, 10, size}):
            got = [h.doc.doc_id for h in retrieve(index, query, emb, k).hits]
            gate.check(got == oracles.full_sort_topk(sims, ids, k), f"trial {trial} k={k} differs")
    ties = [KnowledgeDoc(i, "case", "identical text") for i in ("q", "c", "x", "a", "m")]
    ties += [KnowledgeDoc("zz", "case", "unrelated words entirely")]
    got = [h.doc.doc_id for h in retrieve(index_documents(ties, emb), "identical text", emb, 4).hits]
    gate.check(got == ["a", "c", "m", "q"], f"tie order {got}")
    gate.finish()


def test_criterion_4_record_review():
    gate = Gate(4, "record review: monotone in threshold, inclusive at 0.1, identity 1.0, zero row 0")
    emb = HashEmbedding(256, 0)
    cases = make_cases(20, seed=4)
    grid = np.linspace(-0.2, 1.0, 25)
    for case in cases:
        prev = None
        for thr in grid:
            kept = {e.position for e in RecordReviewer(emb, float(thr)).review(case.medical_history,
                                                                              case.radiology_report).retained}
            gate.check(prev is None or kept <= prev, f"{case.case_id}: not monotone at {thr:.2f}")
            prev = kept
    m = CorrelationMatrix((Entity("a", 0), Entity("b", 5)), ("s",), np.array([[0.1], [0.0999999999]]))
    gate.check([e.text for e in score_and_filter(m, 0.1).retained] == ["a"], "exact 0.1 not retained inclusively")
    report = "Spiculated mass in the left upper lobe. No effusion."
    mat = build_correlation_matrix([Entity("Spiculated mass in the left upper lobe", 0), Entity("+++", 40)],
                                   segment(report), emb)
    gate.check(mat.values[0].max() == 1.0, f"identical text scored {mat.values[0].max()!r}")
    gate.check(not mat.values[1].any(), "zero-embedding row not all zero")
    result = RecordReviewer(emb).review("Spiculated mass in the left upper lobe. +++", report)
    gate.check(result.scores[0] == 1.0 and result.scores[1] == 0.0, f"reviewer scores {result.scores}")
    gate.finish()


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scripted():
    emb = HashEmbedding(256, 0)
    return make_scripted_corpus(50, seed=0), index_documents(make_knowledge_base(), emb), emb


def _pathway(scripted, config):
    corpus, index, emb = scripted
    return build_pathway(config, index=index, chat=ScriptedChat.from_spec(corpus.agent_spec),
                         chief_chat=ScriptedChat.from_spec(corpus.chief_spec), embedder=emb)


def test_criterion_5_determinism(scripted):
    gate = Gate(5, "traces byte-identical across runs and parallelism; critique gives exactly 2 attempts")
    corpus = scripted[0]
    cfg = RunConfig()
    runs = {}
    for label, par in (("p1", 1), ("p8a", 8), ("p8b", 8)):
        runs[label] = [t.to_json() for t in run_batch(corpus.cases, _pathway(scripted, cfg), parallelism=par)]
    gate.check(runs["p8a"] == runs["p8b"], "two parallel runs differ")
    gate.check(runs["p1"] == runs["p8a"], "parallelism 1 and 8 differ")
    traces = [json.loads(t) for t in runs["p1"]]
    gate.check(len(traces) == 50 and all(t["status"] == "COMPLETE" for t in traces), "not all episodes complete")
    for t in traces:
        for s in t["stages"]:
            gate.check(len(s["attempts"]) <= cfg.guidance.max_rounds + 1, f"{t['case_id']} exceeded max rounds")
            expected = 2 if (s["stage"] == "diagnosis" and t["case_id"] in corpus.critiqued) else 1
            gate.check(len(s["attempts"]) == expected,
                       f"{t['case_id']} {s['stage']}: {len(s['attempts'])} attempts, want {expected}")
    gate.finish(f"{len(corpus.critiqued)} critiqued cases")


# Prompt blocks each ablation may change. Switching off record review changes the
# history text, and with it the retrieval query. Switching off guidance changes the
# final diagnosis of critiqued cases, which then reaches treatment via prior_messages.
ABLATION_ALLOWED = {
    "record_review": {"history", "retrieved_context"},
    "retrieval": {"retrieved_context"},
    "guidance": {"guidance", "prior_messages"},
}


def test_criterion_6_ablation_contract(scripted):
    gate = Gate(6, "ablations differ from full only in the toggled prompt sections")
    corpus = scripted[0]
    full = run_batch(corpus.cases, _pathway(scripted, RunConfig()), parallelism=8)
    changed = {}
    for module, allowed in ABLATION_ALLOWED.items():
        ablated = run_batch(corpus.cases, _pathway(scripted, RunConfig().disable([module])), parallelism=8)
        seen = set()
        for f, a in zip(full, ablated):
            for fs, as_ in zip(f.stages, a.stages):
                fb, ab = fs.attempts[0].blocks, as_.attempts[0].blocks
                diff = {key for key in fb.keys() | ab.keys() if fb.get(key) != ab.get(key)}
                seen |= diff
                gate.check(diff <= allowed, f"-{module} {f.case_id}/{fs.stage}: unexpected {sorted(diff - allowed)}")
                if not diff:
                    gate.check(fs.attempts[0].prompt == as_.attempts[0].prompt,
                               f"-{module} {f.case_id}/{fs.stage}: equal blocks but different prompt")
                else:
                    # the rendered prompt changes only inside the differing blocks
                    removed = "".join(l[2:] for l in difflib.ndiff(fs.attempts[0].prompt.splitlines(True),
                                                                    as_.attempts[0].prompt.splitlines(True))
                                      if l.startswith("- "))
                    gate.check(all(line in "".join(fb[k] for k in diff) for line in removed.splitlines() if line),
                               f"-{module} {f.case_id}/{fs.stage}: prompt changed outside toggled blocks")
                if module == "guidance":
                    gate.check(len(as_.attempts) == 1, f"-guidance {f.case_id}/{fs.stage}: retried")
        gate.check(ABLATION_ALLOWED[module].intersection(seen) or module == "guidance",
                   f"-{module} changed nothing")
        changed[module] = sorted(seen)
    full_review = [t.review["status"] for t in full]
    gate.check(set(full_review) == {"ENABLED"}, "full config did not run record review")
    gate.finish(", ".join(f"-{m}: {v}" for m, v in changed.items()))


def test_criterion_7_etl_fixture(tmp_path):
    gate = Gate(7, "ETL fixture yields ICU admissions minus 12 cases, valid labels, byte-stable split")
    write_mimic_fixture(tmp_path / "src", n_admissions=200, n_null_radiology=12, seed=0)
    tables = load_source_tables(tmp_path / "src")
    icu_adm = tables.icustays[["subject_id", "hadm_id"]].drop_duplicates()
    gate.check(len(tables.admissions) == 200, f"fixture has {len(tables.admissions)} admission rows")
    rep = build_dataset(tmp_path / "src", tmp_path / "a", test_size=50, seed=13)
    build_dataset(tmp_path / "src", tmp_path / "b", test_size=50, seed=13)
    gate.check(rep.n_cases == len(icu_adm) - 12, f"{rep.n_cases} cases from {len(icu_adm)} ICU admissions")
    gate.check(rep.dropped_null_radiology == 12, f"null radiology dropped {rep.dropped_null_radiology}")
    cases = read_cases(tmp_path / "a" / "train.jsonl") + read_cases(tmp_path / "a" / "test.jsonl")
    gate.check(len(cases) == rep.n_cases, "split lost cases")
    for c in cases:
        for task in TASKS:
            lab = c.gold(task)
            gate.check(by_code(task, lab.code) == lab, f"{c.case_id}: invalid {task} label {lab.code}")
        gate.check(all(by_code("diagnosis", d.category.code) == d.category for d in c.diagnoses),
                   f"{c.case_id}: invalid secondary category")
    for name in ("train.jsonl", "test.jsonl", "build_report.json"):
        gate.check(filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), f"{name} differs")
    gate.finish(f"{rep.n_cases} cases from {len(icu_adm)} ICU admissions")


def test_criterion_8_wire_protocol():
    gate = Gate(8, "recorded wire fixtures round-trip bit-exactly; 429, 429, 200 makes 3 attempts")
    raw = (WIRE / "chat_request.json").read_bytes()
    gate.check(encode_chat_request(*decode_chat_request(raw)) == raw, "chat request")
    raw = (WIRE / "chat_response.json").read_bytes()
    gate.check(encode_chat_response(decode_chat_response(raw)) == raw, "chat response")
    raw = (WIRE / "embedding_request.json").read_bytes()
    gate.check(encode_embedding_request(*decode_embedding_request(raw)) == raw, "embedding request")
    raw = (WIRE / "embedding_response.json").read_bytes()
    b = parse_embedding_response(raw)
    gate.check(encode_embedding_response(b.model, b.vectors, b.prompt_tokens) == raw, "embedding response")
    ok = encode_chat_response(ChatCompletion("x", 0, "m", "ANSWER: D9"))
    with FakeServer([(429, b"{}"), (429, b"{}"), (200, ok)]) as srv:
        chat = HttpChat(srv.url, "m", sleep=lambda s: None)
        text = chat.complete(ChatRequest("sys", "user")).text
        hits = len(srv.requests)
    gate.check(text == "ANSWER: D9", f"final text {text!r}")
    gate.check(hits == 3 and chat._http.attempts_made == 3, f"{hits} server hits")
    gate.finish(f"{hits} attempts")
