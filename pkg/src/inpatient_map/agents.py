"""Triage -> diagnosis -> treatment agents with a supervising chief agent.

Every agent reply is parsed into the three-field protocol (context,
thinking, answer). When guidance is enabled the chief reviews each reply
and may ask for a revision, up to ``max_rounds`` extra attempts per stage.
"""

from __future__ import annotations

import json
import logging
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .backends import ChatRequest, HashEmbedding, HttpChat, HttpEmbedding, ScriptedChat, chat_complete
from .cases import PatientCase
from .config import RunConfig
from .errors import BackendUnavailable, InputError
from .retrieval import FilterReranker, VectorIndex, assemble_cot_context, make_reranker, rerank, retrieve
from .review import RecordReviewer, ReviewResult, load_lexicon
from .taxonomy import PARSE_FAIL, TASKS, extract_label, labels_for

log = logging.getLogger(__name__)

PLACEHOLDERS = ("demographics", "radiology_report", "history", "retrieved_context", "prior_messages",
                "options", "guidance")
TEMPLATE_NAMES = TASKS + tuple(f"chief_{t}" for t in TASKS)
DIGEST_CHARS = 300
SNIPPET_CHARS = 400

TASK_LINES = {
    "triage": "Triage: assign the admitted patient to one of nine departments.",
    "diagnosis": "Diagnosis: identify the patient's disease category among seventeen options.",
    "treatment": "Treatment: select one of sixteen treatment pathways.",
}

SYSTEM_PROMPTS = {
    "triage": "You are the triage agent of an inpatient care team. You assign newly admitted patients "
              "to the most suitable department.",
    "diagnosis": "You are the diagnosis agent of an inpatient care team and the primary decision maker "
                 "in your department. Reason step by step before committing to a diagnosis.",
    "treatment": "You are the treatment agent of an inpatient care team. You choose the treatment "
                 "pathway that completes the patient's inpatient plan.",
    "chief": "You are the chief physician supervising the clinical agents. You check their decisions "
             "against the patient record and established guidelines.",
}


# ---------------------------------------------------------------------------
# Data types


@dataclass(frozen=True)
class AgentMessage:
    context: str
    thinking: str
    answer: str

    def to_dict(self):
        return {"context": self.context, "thinking": self.thinking, "answer": self.answer}


@dataclass(frozen=True)
class GuidanceVerdict:
    approved: bool
    critique: str = ""
    fail_open: bool = False

    def __post_init__(self):
        if self.approved and self.critique:
            raise ValueError("an approving verdict carries no critique")
        if not self.approved and not self.critique:
            raise ValueError("a revision verdict needs a critique")

    def to_dict(self):
        return {"approved": self.approved, "critique": self.critique, "fail_open": self.fail_open}


@dataclass
class Attempt:
    prompt: str
    blocks: dict
    response: str
    message: AgentMessage
    prediction: str  # canonical code or PARSE_FAIL
    verdict: GuidanceVerdict | None = None
    chief_prompt: str | None = None

    def to_dict(self):
        return {
            "prompt": self.prompt,
            "blocks": self.blocks,
            "response": self.response,
            "message": self.message.to_dict(),
            "prediction": self.prediction,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "chief_prompt": self.chief_prompt,
        }


@dataclass
class StageRecord:
    stage: str
    attempts: list[Attempt] = field(default_factory=list)
    final_prediction: str = PARSE_FAIL
    routed_department: str | None = None

    @property
    def guidance_rounds_used(self) -> int:
        return max(len(self.attempts) - 1, 0)

    @property
    def final_message(self) -> AgentMessage:
        return self.attempts[-1].message

    def to_dict(self):
        d = {
            "stage": self.stage,
            "final_prediction": self.final_prediction,
            "guidance_rounds_used": self.guidance_rounds_used,
            "attempts": [a.to_dict() for a in self.attempts],
        }
        if self.routed_department is not None:
            d["routed_department"] = self.routed_department
        return d


@dataclass
class EpisodeTrace:
    case_id: str
    config_hash: str
    review: dict
    retrieved: dict
    stages: list[StageRecord] = field(default_factory=list)
    status: str = "COMPLETE"
    error: str | None = None

    @property
    def predictions(self) -> dict:
        preds = {t: PARSE_FAIL for t in TASKS}
        preds.update({s.stage: s.final_prediction for s in self.stages})
        return preds

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "config_hash": self.config_hash,
            "status": self.status,
            "error": self.error,
            "review": self.review,
            "retrieved": self.retrieved,
            "stages": [s.to_dict() for s in self.stages],
            "predictions": self.predictions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def trace_from_dict(d: dict) -> EpisodeTrace:
    stages = []
    for s in d.get("stages", []):
        attempts = []
        for a in s["attempts"]:
            v = a.get("verdict")
            attempts.append(Attempt(
                prompt=a["prompt"], blocks=a["blocks"], response=a["response"],
                message=AgentMessage(**a["message"]), prediction=a["prediction"],
                verdict=GuidanceVerdict(**v) if v else None, chief_prompt=a.get("chief_prompt"),
            ))
        stages.append(StageRecord(s["stage"], attempts, s["final_prediction"], s.get("routed_department")))
    return EpisodeTrace(d["case_id"], d["config_hash"], d["review"], d["retrieved"], stages,
                        d.get("status", "COMPLETE"), d.get("error"))


def read_traces(path) -> list[EpisodeTrace]:
    with open(path, encoding="utf-8") as fh:
        return [trace_from_dict(json.loads(line)) for line in fh if line.strip()]


def write_traces(path, traces: Sequence[EpisodeTrace]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(t.to_json() + "\n")


# ---------------------------------------------------------------------------
# Templates and prompt blocks


def load_templates(directory: str | Path | None = None) -> dict[str, str]:
    """Load the six prompt templates; files missing from ``directory`` fall back to the packaged ones."""
    packaged = resources.files("inpatient_map").joinpath("templates")
    templates = {}
    for name in TEMPLATE_NAMES:
        path = Path(directory) / f"{name}.txt" if directory else None
        if path is not None and path.is_file():
            text = path.read_text(encoding="utf-8")
        else:
            text = packaged.joinpath(f"{name}.txt").read_text(encoding="utf-8")
        fields = {f for _, f, _, _ in string.Formatter().parse(text) if f is not None}
        unknown = fields - set(PLACEHOLDERS)
        if unknown:
            raise InputError(f"template {name}: unknown placeholders {sorted(unknown)}")
        templates[name] = text
    return templates


def render_template(template: str, blocks: dict) -> str:
    text = template.format_map({k: blocks.get(k, "") for k in PLACEHOLDERS})
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip() + "\n"


def options_block(stage: str) -> str:
    return "\n".join(f"{lab.code}: {lab.long_title}" for lab in labels_for(stage))


def history_block(history: str, reviewed: bool) -> str:
    if not history:
        return ""
    if reviewed:
        return "MEDICAL HISTORY (entities relevant to the radiology report)\n" + history
    return "MEDICAL HISTORY\n" + history


def digest(text: str) -> str:
    text = " ".join((text or "").split())
    return text[:DIGEST_CHARS]


def prior_messages_block(prior: Sequence[tuple[str, AgentMessage]]) -> str:
    if not prior:
        return ""
    lines = ["PRIOR AGENT MESSAGES"]
    for stage, msg in prior:
        lines.append(f"[{stage.upper()} AGENT] answer: {msg.answer}")
        if msg.thinking:
            lines.append(f"reasoning digest: {digest(msg.thinking)}")
    return "\n".join(lines)


def guidance_block(critiques: Sequence[str]) -> str:
    if not critiques:
        return ""
    lines = ["CHIEF AGENT GUIDANCE"]
    lines += [f"Round {i}: {c}" for i, c in enumerate(critiques, 1)]
    lines.append("Reconsider your decision in light of this guidance before answering again.")
    return "\n".join(lines)


def context_field(stage: str, prior: Sequence[tuple[str, AgentMessage]]) -> str:
    lines = [TASK_LINES[stage]]
    if prior:
        lines.append("Decisions so far: " + "; ".join(f"{s}={m.answer}" for s, m in prior))
        lines += [f"{s} reasoning: {digest(m.thinking)}" for s, m in prior if m.thinking]
    return "\n".join(lines)


_FIELD = re.compile(r"^[ \t]*\**(CONTEXT|THINKING|ANSWER)\**[ \t]*:[ \t]*", re.IGNORECASE | re.MULTILINE)


def parse_agent_output(text: str) -> tuple[str, str]:
    """Extract (thinking, answer) from a reply in the three-field protocol.

    Accepts ``FIELD: value`` sections or a JSON object with those keys; a
    reply with neither is taken whole as the answer.
    """
    text = (text or "").strip()
    fields = {}
    matches = list(_FIELD.finditer(text))
    for m, nxt in zip(matches, matches[1:] + [None]):
        fields.setdefault(m.group(1).lower(), text[m.end(): nxt.start() if nxt else len(text)].strip())
    if "answer" in fields:
        return fields.get("thinking", ""), fields["answer"]
    if text.startswith("{"):
        try:
            obj = json.loads(text)
            if isinstance(obj, dict) and "answer" in obj:
                return str(obj.get("thinking", "")), str(obj["answer"])
        except json.JSONDecodeError:
            pass
    return fields.get("thinking", ""), text


_REVISE = re.compile(r"^\s*\**REVISE\**\s*:\s*(.+)$", re.IGNORECASE | re.DOTALL)
_APPROVE = re.compile(r"^\s*\**APPROVE\b", re.IGNORECASE)


def parse_verdict(text: str) -> GuidanceVerdict:
    """``APPROVE`` or ``REVISE: <critique>``; anything else fails open to approval."""
    m = _REVISE.match(text or "")
    if m and m.group(1).strip():
        return GuidanceVerdict(False, m.group(1).strip())
    if _APPROVE.match(text or ""):
        return GuidanceVerdict(True)
    log.warning("unparseable chief verdict, approving: %r", (text or "")[:120])
    return GuidanceVerdict(True, fail_open=True)


# ---------------------------------------------------------------------------
# Chief agent


@dataclass
class ChiefAgent:
    chat: object
    templates: dict
    index: VectorIndex | None = None
    embedder: object = None
    k: int = 5
    temperature: float = 0.0
    max_tokens: int = 512

    def guideline_snippets(self, query: str) -> str:
        if self.index is None or self.embedder is None or len(self.index) == 0:
            return ""
        hits = rerank(retrieve(self.index, query, self.embedder, k=len(self.index)), FilterReranker("guideline"))
        hits = hits.hits[: self.k]
        if not hits:
            return ""
        parts = [f"[{h.doc.doc_id}] {h.doc.text.strip()[:SNIPPET_CHARS]}" for h in hits]
        return "RELEVANT GUIDELINES\n" + "\n".join(parts)

    def prompt(self, stage: str, msg: AgentMessage, prediction: str, case_blocks: dict) -> str:
        proposal = f"AGENT PROPOSAL\nPROPOSED ANSWER: {prediction if prediction != PARSE_FAIL else msg.answer}"
        if msg.thinking:
            proposal += f"\nREASONING: {msg.thinking}"
        query = f"{case_blocks.get('radiology_report', '')}\n{msg.answer}\n{msg.thinking}"
        blocks = {
            "demographics": case_blocks.get("demographics", ""),
            "radiology_report": case_blocks.get("radiology_report", ""),
            "history": case_blocks.get("history", ""),
            "prior_messages": proposal,
            "retrieved_context": self.guideline_snippets(query),
            "options": options_block(stage),
            "guidance": "",
        }
        return render_template(self.templates[f"chief_{stage}"], blocks)


def chief_review(stage: str, msg: AgentMessage, chief: ChiefAgent, prediction: str = PARSE_FAIL,
                 case_blocks: dict | None = None) -> tuple[GuidanceVerdict, str]:
    """Ask the chief to judge one agent message; returns (verdict, chief prompt)."""
    prompt = chief.prompt(stage, msg, prediction, case_blocks or {})
    resp = chat_complete(chief.chat, ChatRequest(SYSTEM_PROMPTS["chief"], prompt, chief.temperature,
                                                 chief.max_tokens))
    return parse_verdict(resp.text), prompt


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class Pathway:
    """Everything one episode needs: config plus constructed services."""

    config: RunConfig
    chat: object
    templates: dict
    embedder: object = None
    index: VectorIndex | None = None
    chief: ChiefAgent | None = None
    reviewer: RecordReviewer | None = None
    reranker: object = None

    @property
    def config_hash(self) -> str:
        return self.config.config_hash


def make_chat(bcfg):
    if bcfg.kind == "mock":
        if not bcfg.rules:
            return ScriptedChat(default="")
        return ScriptedChat.from_file(bcfg.rules)
    return HttpChat(bcfg.base_url, bcfg.model, retries=bcfg.retries, inflight=bcfg.inflight, timeout=bcfg.timeout)


def make_embedder(ecfg):
    if ecfg.kind == "hash":
        return HashEmbedding(ecfg.dim, ecfg.seed)
    return HttpEmbedding(ecfg.base_url, ecfg.model)


def build_pathway(config: RunConfig, index: VectorIndex | None = None, chat=None, chief_chat=None,
                  embedder=None, reranker=None) -> Pathway:
    """Construct services from ``config``; explicit arguments override the config's choices."""
    embedder = embedder or make_embedder(config.embedding)
    templates = load_templates(config.templates)
    chat = chat or make_chat(config.backend)
    rr = config.record_review
    reviewer = None
    if rr.enabled:
        lexicon = load_lexicon(rr.lexicon) if rr.lexicon else []
        reviewer = RecordReviewer(embedder, rr.threshold, rr.score, lexicon, rr.overall_column)
    chief = None
    if config.guidance.enabled:
        chief = ChiefAgent(chief_chat or make_chat(config.chief_backend), templates, index, embedder,
                           config.guidance.chief_k, config.chief_backend.temperature,
                           config.chief_backend.max_tokens)
    if reranker is None:
        reranker = make_reranker(config.retrieval.reranker, **config.retrieval.reranker_args)
    return Pathway(config, chat, templates, embedder, index, chief, reviewer, reranker)


def retrieval_query(case: PatientCase, history: str, mode: str) -> str:
    if mode == "report":
        return case.radiology_report
    if mode == "report_history":
        return f"{case.radiology_report}\n{history}".strip()
    return f"{case.demographics.render()}\n{case.radiology_report}\n{history}".strip()


def run_stage(stage: str, case: PatientCase, prior: Sequence[tuple[str, AgentMessage]], pathway: Pathway,
              case_blocks: dict, retrieved_context: str = "") -> StageRecord:
    """Run one stage, including any chief-guided retries.

    The final prediction is the last answer that resolved to a label, else
    PARSE_FAIL. Backend failures propagate.
    """
    cfg = pathway.config
    guided = pathway.chief is not None and stage in cfg.guidance.stages
    max_rounds = cfg.guidance.max_rounds if guided else 0
    record = StageRecord(stage)
    earlier = dict(prior)
    if stage == "diagnosis" and "triage" in earlier:
        routed = extract_label("triage", earlier["triage"].answer)
        record.routed_department = routed.code if routed else PARSE_FAIL
    ctx = context_field(stage, prior)
    critiques: list[str] = []
    for round_no in range(max_rounds + 1):
        blocks = dict(case_blocks)
        blocks.update({
            "prior_messages": prior_messages_block(prior),
            "retrieved_context": retrieved_context if stage == "diagnosis" else "",
            "options": options_block(stage),
            "guidance": guidance_block(critiques),
        })
        prompt = render_template(pathway.templates[stage], blocks)
        req = ChatRequest(SYSTEM_PROMPTS[stage], prompt, cfg.backend.temperature, cfg.backend.max_tokens)
        resp = chat_complete(pathway.chat, req)
        thinking, answer = parse_agent_output(resp.text)
        msg = AgentMessage(ctx, thinking, answer)
        label = extract_label(stage, answer)
        prediction = label.code if label else PARSE_FAIL
        attempt = Attempt(prompt, blocks, resp.text, msg, prediction)
        record.attempts.append(attempt)
        if label:
            record.final_prediction = label.code
        if not guided:
            break
        attempt.verdict, attempt.chief_prompt = chief_review(stage, msg, pathway.chief, prediction, case_blocks)
        if attempt.verdict.approved or round_no == max_rounds:
            break
        critiques.append(attempt.verdict.critique)
    return record


def run_pathway(case: PatientCase, pathway: Pathway) -> EpisodeTrace:
    """Record review, retrieval, then the three stages in order."""
    cfg = pathway.config
    trace = EpisodeTrace(case.case_id, pathway.config_hash, {"status": "DISABLED"}, {"status": "DISABLED"})
    try:
        if pathway.reviewer is not None:
            result: ReviewResult = pathway.reviewer.review(case.medical_history, case.radiology_report)
            history = result.filtered_history
            trace.review = result.to_dict()
        else:
            history = case.medical_history
            trace.review = {"status": "DISABLED", "history": history}
        retrieved_context = ""
        if cfg.retrieval.enabled and pathway.index is not None:
            query = retrieval_query(case, history, cfg.retrieval.query_mode)
            hits = rerank(retrieve(pathway.index, query, pathway.embedder, cfg.retrieval.k), pathway.reranker)
            retrieved_context = assemble_cot_context(case, hits, cfg.retrieval.budget)
            trace.retrieved = {"status": "ENABLED", "query_mode": cfg.retrieval.query_mode,
                               "k": cfg.retrieval.k, "hits": hits.summary()}
        elif cfg.retrieval.enabled:
            trace.retrieved = {"status": "NO_INDEX"}
        case_blocks = {
            "demographics": "DEMOGRAPHICS\n" + case.demographics.render(),
            "radiology_report": "RADIOLOGY REPORT\n" + case.radiology_report,
            "history": history_block(history, reviewed=pathway.reviewer is not None),
        }
        prior: list[tuple[str, AgentMessage]] = []
        for stage in TASKS:
            rec = run_stage(stage, case, prior, pathway, case_blocks, retrieved_context)
            trace.stages.append(rec)
            prior.append((stage, rec.final_message))
    except BackendUnavailable as exc:
        trace.status = "ABORTED"
        trace.error = f"BackendUnavailable: {exc}"
    return trace


def _safe_run(case: PatientCase, pathway: Pathway) -> EpisodeTrace:
    try:
        return run_pathway(case, pathway)
    except Exception as exc:  # isolate one bad episode from the batch
        log.exception("episode %s failed", case.case_id)
        return EpisodeTrace(case.case_id, pathway.config_hash, {"status": "ERROR"}, {"status": "ERROR"},
                            status="ABORTED", error=f"{type(exc).__name__}: {exc}")


def run_batch(cases: Sequence[PatientCase], pathway: Pathway, parallelism: int = 8) -> list[EpisodeTrace]:
    """Run episodes concurrently; results come back in input order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1:
        return [_safe_run(c, pathway) for c in cases]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda c: _safe_run(c, pathway), cases))
