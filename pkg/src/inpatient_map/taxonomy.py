"""Label sets for the three pathway tasks.

Departments (9), disease categories (17) and treatments (16) are stored as
embedded constants; cardinalities are checked at import time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import UnknownLabel

TASKS = ("triage", "diagnosis", "treatment")
PARSE_FAIL = "PARSE_FAIL"


@dataclass(frozen=True)
class Label:
    task: str
    code: str
    long_title: str
    index: int  # 1-based position within the task's label set

    def __str__(self):
        return self.code


_DEPARTMENTS = [
    ("CVICU", "Cardiac Vascular Intensive Care Unit"),
    ("CCU", "Coronary Care Unit"),
    ("MICU", "Medical Intensive Care Unit"),
    ("MSICU", "Medical and Surgical Intensive Care Unit"),
    ("Neuro Intermediate", "Neuro Intermediate"),
    ("Neuro Stepdown", "Neuro Stepdown"),
    ("Neuro SICU", "Neuro Surgical Intensive Care Unit"),
    ("SICU", "Surgical Intensive Care Unit"),
    ("TSICU", "Trauma Surgical Intensive Care Unit"),
]

_DISEASES = [
    ("D1", "Symptoms, signs, and abnormal clinical and laboratory findings, not elsewhere classified"),
    ("D2", "Symptoms, signs and abnormal clinical and laboratory findings"),
    ("D3", "Pregnancy, childbirth and the puerperium"),
    ("D4", "Neoplasms"),
    ("D5", "Mental and behavioral disorders"),
    ("D6", "Injury, poisoning, and certain other consequences of external causes"),
    ("D7", "Endocrine, nutritional and metabolic diseases"),
    ("D8", "Diseases of the skin and subcutaneous tissue"),
    ("D9", "Diseases of the respiratory system"),
    ("D10", "Diseases of the nervous system and sense organs"),
    ("D11", "Diseases of the musculoskeletal system and connective tissue"),
    ("D12", "Diseases of the genitourinary system"),
    ("D13", "Diseases of the digestive system"),
    ("D14", "Diseases of the circulatory system"),
    ("D15", "Diseases of the blood and blood-forming organs and certain disorders involving the immune mechanism"),
    ("D16", "Congenital malformations, deformations and chromosomal abnormalities"),
    ("D17", "Certain infectious and parasitic diseases"),
]

_TREATMENTS = [
    ("T1", "Vascular surgery, mainly refers to surgery related to the circulatory system"),
    ("T2", "Thoracic surgery, mainly refers to chest surgery between the abdomen and the neck"),
    ("T3", "Trauma surgical treatment, physical injury or damage caused by external physical factors"),
    ("T4", "General surgical treatment, mainly refers to types of surgery that cannot be classified by specialty"),
    ("T5", "Plastic treatment, mainly for the repair or reconstruction of the human body"),
    ("T6", "Orthopedic surgical treatment, mainly involving the musculoskeletal system"),
    ("T7", "Orthopedic treatment, mainly involving the musculoskeletal system"),
    ("T8", "Obstetrics, maternal classification and refusal"),
    ("T9", "Neurosurgery treatment, surgical treatment related to the brain"),
    ("T10", "Neurology treatment, non-surgical treatment related to the brain"),
    ("T11", "General medical treatment"),
    ("T12", "Gynecological treatment, female reproductive system and breasts, etc."),
    ("T13", "Urogenital treatment, urinary system and reproductive system"),
    ("T14", "Otolaryngology treatment mainly for the ear, nose and throat-related areas"),
    ("T15", "Cardiovascular surgery treatment, surgical treatment of cardiovascular diseases"),
    ("T16", "Cardiovascular medicine treatment, conservative treatment of cardiovascular diseases"),
]


def _build(task, rows, expected):
    labels = tuple(Label(task, code, title, i + 1) for i, (code, title) in enumerate(rows))
    codes = {lab.code for lab in labels}
    titles = {lab.long_title for lab in labels}
    if len(labels) != expected or len(codes) != expected or len(titles) != expected:
        raise RuntimeError(f"{task} taxonomy must have {expected} distinct labels")
    return labels


DEPARTMENTS = _build("triage", _DEPARTMENTS, 9)
DISEASES = _build("diagnosis", _DISEASES, 17)
TREATMENTS = _build("treatment", _TREATMENTS, 16)

LABELS = {"triage": DEPARTMENTS, "diagnosis": DISEASES, "treatment": TREATMENTS}
_BY_CODE = {task: {lab.code: lab for lab in labs} for task, labs in LABELS.items()}


def labels_for(task: str) -> tuple[Label, ...]:
    try:
        return LABELS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}") from None


def by_code(task: str, code: str) -> Label:
    """Strict lookup by canonical code (case-sensitive)."""
    labels_for(task)
    try:
        return _BY_CODE[task][code]
    except KeyError:
        raise UnknownLabel(f"{code!r} is not a {task} code") from None


def _norm(text: str) -> str:
    return " ".join(text.split())


def label_from_token(task: str, token: str) -> Label:
    """Canonicalise a free-form token to a label of ``task``.

    Matching order: case-insensitive code, exact long title, then a token
    that is a substring of exactly one long title (case-insensitive).
    """
    labels = labels_for(task)
    tok = _norm(token or "")
    if not tok:
        raise UnknownLabel("empty label token")
    folded = tok.casefold()
    for lab in labels:
        if lab.code.casefold() == folded:
            return lab
    for lab in labels:
        if lab.long_title == tok:
            return lab
    hits = [lab for lab in labels if folded in lab.long_title.casefold()]
    if len(hits) == 1:
        return hits[0]
    if hits:
        raise UnknownLabel(f"{token!r} is ambiguous among {[h.code for h in hits]}")
    raise UnknownLabel(f"{token!r} does not match any {task} label")


def _code_pattern(task):
    # longest codes first so "Neuro SICU" wins over "SICU"
    codes = sorted((lab.code for lab in labels_for(task)), key=len, reverse=True)
    alts = "|".join(re.escape(c).replace(r"\ ", r"\s+") for c in codes)
    return re.compile(rf"(?<![A-Za-z0-9])({alts})(?![A-Za-z0-9])", re.IGNORECASE)


_CODE_PATTERNS = {task: _code_pattern(task) for task in TASKS}


def extract_label(task: str, answer: str) -> Label | None:
    """Resolve an agent's answer field, tolerating surrounding prose.

    Tries :func:`label_from_token` on the whole answer first, then scans for
    option codes. Returns None unless exactly one distinct label is found.
    """
    try:
        return label_from_token(task, answer)
    except UnknownLabel:
        pass
    found = {label_from_token(task, m.group(1)) for m in _CODE_PATTERNS[task].finditer(answer or "")}
    if len(found) == 1:
        return found.pop()
    return None
